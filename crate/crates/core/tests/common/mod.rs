#![allow(dead_code)]

use std::sync::Arc;

use cone_ke::geometry::{build_grid, potential_density, ricci_density, ScalarField, SphereGrid, SymmetryMode};

pub fn z2(ns: usize) -> Arc<SphereGrid<f64>> {
    Arc::new(build_grid::<f64>(12.0, ns, 1, SymmetryMode::S1Z2Invariant).unwrap())
}

pub fn full(ns: usize, nphi: usize) -> Arc<SphereGrid<f64>> {
    Arc::new(build_grid::<f64>(12.0, ns, nphi, SymmetryMode::Full2d).unwrap())
}

/// n-point Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// E(phi_1) = -int_0^1 int dphi/dt (Ric omega_t - omega_t) dt for the round reference (h = 0),
/// along a path given with its t-derivative. Test potentials are flat at the truncation,
/// so the chart sum carries the whole integral.
pub fn mabuchi_along(
    grid: &Arc<SphereGrid<f64>>,
    path: impl Fn(f64) -> (ScalarField<f64>, Vec<f64>),
) -> f64 {
    gauss_legendre_01(64)
        .into_iter()
        .map(|(t, w)| {
            let (phi, dphi) = path(t);
            let rho = potential_density(&phi);
            let ric = ricci_density(&rho).unwrap();
            let f: Vec<f64> = (0..grid.len()).map(|i| dphi[i] * (ric.values()[i] - rho.values()[i])).collect();
            -w * grid.chart_sum(&f)
        })
        .sum()
}
