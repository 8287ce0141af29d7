use std::sync::Arc;

use crate::geometry::{
    fubini_study, log_divisor_norm, log_norm_eps, ricci_potential, DivisorConfig, GeometryError, MetricDensity,
    ScalarField, SphereGrid,
};
use crate::real::Real;

use super::{newton_solve, Gauge, MAProblem, MaError, NewtonOptions, Normalization, Potential, Solution};

/// Fixed data shared by every solve on one grid with one divisor: the Ricci
/// potential of omega0 and log |S_i|^2 of each component.
#[derive(Clone, Debug)]
pub struct Background<T: Real> {
    grid: Arc<SphereGrid<T>>,
    divisor: DivisorConfig<T>,
    h: ScalarField<T>,
    log_norms: Vec<Vec<T>>,
    masks: Vec<Vec<bool>>,
}

impl<T: Real> Background<T> {
    pub fn new(grid: Arc<SphereGrid<T>>, divisor: DivisorConfig<T>) -> Result<Self, GeometryError> {
        divisor.check_grid(&grid)?;
        let h = ricci_potential(&fubini_study(&grid))?;
        let mut log_norms = Vec::new();
        let mut masks = Vec::new();
        for i in 0..divisor.n_components() {
            let (l, m) = log_divisor_norm(&grid, &divisor, i)?;
            log_norms.push(l);
            masks.push(m);
        }
        Ok(Background { grid, divisor, h, log_norms, masks })
    }

    pub fn grid(&self) -> &Arc<SphereGrid<T>> {
        &self.grid
    }

    pub fn divisor(&self) -> &DivisorConfig<T> {
        &self.divisor
    }

    /// Ricci potential of omega0, sup = 0.
    pub fn h(&self) -> &ScalarField<T> {
        &self.h
    }

    pub fn n_components(&self) -> usize {
        self.log_norms.len()
    }

    /// log |S_i|^2 (finite everywhere; nodes on the point carry the floor value).
    pub fn log_norm(&self, i: usize) -> &[T] {
        &self.log_norms[i]
    }

    /// Nodes within one cell of a point of component i.
    pub fn singular_mask(&self, i: usize) -> &[bool] {
        &self.masks[i]
    }

    pub fn lambda(&self, i: usize) -> T {
        self.divisor.components()[i].lambda
    }

    pub fn lambdas(&self) -> Vec<T> {
        self.divisor.components().iter().map(|c| c.lambda).collect()
    }

    /// mu = 1 - sum lambda_i (1 - beta_i) for per-component angles.
    pub fn mu(&self, angles: &[T]) -> T {
        self.lambdas().iter().zip(angles).fold(T::one(), |acc, (&l, &b)| acc - l * (T::one() - b))
    }

    /// log(|S_i|^2 + eps).
    pub fn log_norm_eps(&self, i: usize, eps: T) -> Result<Vec<T>, GeometryError> {
        check_eps(eps)?;
        Ok(log_norm_eps(&self.log_norms[i], eps))
    }

    /// sum_i (1 - beta_i) log(|S_i|^2 + eps).
    pub fn divisor_term(&self, eps: T, angles: &[T]) -> Result<Vec<T>, GeometryError> {
        let mut acc = vec![T::zero(); self.grid.len()];
        for (i, &b) in angles.iter().enumerate() {
            let w = T::one() - b;
            if w == T::zero() {
                continue;
            }
            for (a, l) in acc.iter_mut().zip(self.log_norm_eps(i, eps)?) {
                *a = *a + w * l;
            }
        }
        Ok(acc)
    }
}

pub(crate) fn check_eps<T: Real>(eps: T) -> Result<(), GeometryError> {
    if eps > T::zero() && eps <= T::one() {
        Ok(())
    } else {
        Err(GeometryError::InvalidEpsilon(eps.as_f64()))
    }
}

/// Solves omega_phi = exp(G + c) omega0 at t = 0 with c fixed by the mass.
pub fn solve_volume<T: Real>(log_profile: &ScalarField<T>, opts: &NewtonOptions<T>) -> Result<Solution<T>, MaError> {
    let problem = MAProblem::new(T::zero(), log_profile.clone(), Gauge::FreeConstant)?;
    newton_solve(&problem, &ScalarField::zeros(log_profile.grid().clone()), opts)
}

/// The singular volume whose smoothing defines eta_eps.
#[derive(Clone, Debug)]
pub enum VolumeProfile<T: Real> {
    /// exp(h) omega0 / prod |S_i|^{2 - 2 beta_i}, i.e. seed potential 0.
    Model,
    /// exp(-mu phi_seed + h) omega0 / prod |S_i|^{2 - 2 beta_i} for a weak solution phi_seed.
    Seeded(ScalarField<T>),
}

#[derive(Clone, Debug)]
pub struct VolumeFamily<T: Real> {
    pub eta: MetricDensity<T>,
    /// Solves omega_{phi_eps} = eta, sup-normalized.
    pub phi_eps: Potential<T>,
    /// Normalizing constant of eta.
    pub c: T,
}

/// Smooth volume forms eta_eps = exp(-mu phi_seed + h + c) rho0 / prod(|S_i|^2 + eps)^{1 - beta_i},
/// normalized to the class mass, and their potentials.
pub fn smooth_volume_family<T: Real>(
    bg: &Background<T>,
    profile: &VolumeProfile<T>,
    eps: T,
    opts: &NewtonOptions<T>,
) -> Result<VolumeFamily<T>, MaError> {
    check_eps(eps)?;
    let angles = bg.divisor.angles();
    let mu = bg.mu(&angles);
    let div = bg.divisor_term(eps, &angles)?;
    let h = bg.h.values();
    let g: Vec<T> = (0..bg.grid.len())
        .map(|i| {
            let seed = match profile {
                VolumeProfile::Model => T::zero(),
                VolumeProfile::Seeded(f) => f.values()[i],
            };
            -mu * seed + h[i] - div[i]
        })
        .collect();
    let g = ScalarField::new(bg.grid.clone(), g)?;
    let sol = solve_volume(&g, opts)?;
    let rho = (0..bg.grid.len()).map(|i| (g.values()[i] + sol.constant).exp() * bg.grid.rho0_at(i)).collect();
    let eta = MetricDensity::new(bg.grid.clone(), rho, T::one())?;
    Ok(VolumeFamily { eta, phi_eps: sol.potential.normalized(Normalization::SupZero), c: sol.constant })
}

/// Reference potential of the first path at t = 0.
#[derive(Clone, Debug)]
pub struct Reference<T: Real> {
    /// psi_{eps,beta}, sup-normalized.
    pub psi: Potential<T>,
    pub c_norm: T,
}

/// Solves omega_psi = exp(-mu phi_eps + h + c_norm) rho0 / prod(|S_i|^2 + eps)^{1 - beta_i}.
pub fn solve_reference<T: Real>(
    bg: &Background<T>,
    eps: T,
    phi_eps: &Potential<T>,
    opts: &NewtonOptions<T>,
) -> Result<Reference<T>, MaError> {
    let fam = smooth_volume_family(bg, &VolumeProfile::Seeded(phi_eps.field().clone()), eps, opts)?;
    Ok(Reference { psi: fam.phi_eps, c_norm: fam.c })
}
