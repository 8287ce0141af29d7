use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{ScalarField, SphereGrid};
use crate::real::{lit, Real};

#[derive(Clone, Copy, Debug)]
pub struct RandomPotentialOptions {
    /// Total degree of the polynomial in the embedding coordinates.
    pub degree: usize,
    /// Lower bound on rho_phi / rho0 at full amplitude.
    pub min_ratio: f64,
}

impl Default for RandomPotentialOptions {
    fn default() -> Self {
        RandomPotentialOptions { degree: 4, min_ratio: 0.2 }
    }
}

/// A seeded Kähler-positive test potential sech^4 s * P(x1, x2, x3).
///
/// The sech^4 factor makes the potential flat at the truncation, and the
/// amplitude is drawn in (0, A] with A the largest amplitude keeping
/// rho_phi / rho0 >= min_ratio. Rotation-invariant grids only see P(x3), and
/// the z2 grid only its even part.
pub fn random_potential<T: Real>(grid: &Arc<SphereGrid<T>>, seed: u64, opts: &RandomPotentialOptions) -> ScalarField<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = grid.nphi() > 1;
    let mut terms: Vec<([usize; 3], f64)> = Vec::new();
    for a in 0..=opts.degree {
        for b in 0..=opts.degree - a {
            for c in 0..=opts.degree - a - b {
                if a + b + c == 0 || (!full && a + b > 0) {
                    continue;
                }
                terms.push(([a, b, c], rng.gen_range(-1.0..1.0)));
            }
        }
    }
    let mut v: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.node_embedding(i).map(|c| c.as_f64());
            let sech2 = 1.0 - x[2] * x[2];
            let p: f64 = terms
                .iter()
                .map(|&(e, c)| c * x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32))
                .sum();
            sech2 * sech2 * p
        })
        .collect();
    if grid.mode() == crate::geometry::SymmetryMode::S1Z2Invariant {
        let n = v.len();
        for r in 0..n / 2 {
            let a = 0.5 * (v[r] + v[n - 1 - r]);
            v[r] = a;
            v[n - 1 - r] = a;
        }
    }
    let vt: Vec<T> = v.iter().map(|&x| lit(x)).collect();
    let lap = grid.laplacian(&vt);
    let worst = (0..grid.len()).map(|i| -0.5 * lap[i].as_f64() / grid.rho0_at(i).as_f64()).fold(0.0, f64::max);
    let amp_max = if worst > 0.0 { (1.0 - opts.min_ratio) / worst } else { 1.0 };
    let amp = amp_max * rng.gen_range(0.05..=1.0);
    ScalarField::new(grid.clone(), vt.into_iter().map(|x| x * lit(amp)).collect()).expect("finite values")
}
