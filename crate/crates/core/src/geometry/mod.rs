//! The sphere in the cylinder chart: grid, fields, metric densities, divisor
//! sections and the differential and quadrature primitives built on them.
//!
//! Densities are taken against (i/2) dw ^ dw-bar with w = s + i phi, so that
//! omega_phi has density rho0 + 1/2 Delta_flat phi and the reference is
//! rho0 = sech^2 s with total mass 4 pi.

mod divisor;
mod field;
mod grid;

use std::sync::Arc;

use crate::linalg::{self, LinearError};
use crate::real::{lit, Real};

pub use divisor::{
    chi_epsilon, divisor_norm_squared, log_divisor_norm, log_norm_eps, Component, DivisorConfig, DivisorMode,
    DivisorPoint,
};
pub use field::{MetricDensity, ScalarField};
pub use grid::{build_grid, SphereGrid, SymmetryMode};

#[allow(unused_imports)]
pub(crate) use grid::{sech2, softplus};

#[derive(Debug, Clone, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid divisor: {0}")]
    InvalidDivisor(String),
    #[error("divisor not representable on this grid: {0}")]
    UnrepresentablePoint(String),
    #[error("smoothing parameter must lie in (0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("field has {got} values, grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },
    #[error("density is not positive at node {index}")]
    NotPositive { index: usize },
    #[error("density is not in the anticanonical class: relative mass defect {defect:e}")]
    SolvabilityDefect { defect: f64 },
    #[error(transparent)]
    Linear(#[from] LinearError),
}

/// Relative mass defect above which a density is rejected by [`ricci_potential`].
pub const CLASS_DEFECT_TOL: f64 = 1e-8;

/// The round metric of area 4 pi.
pub fn fubini_study<T: Real>(grid: &Arc<SphereGrid<T>>) -> MetricDensity<T> {
    let rho = (0..grid.len()).map(|i| grid.rho0_at(i)).collect();
    MetricDensity::from_vec(grid.clone(), rho, T::one())
}

/// Density of omega0 + i ddbar phi.
pub fn potential_density<T: Real>(phi: &ScalarField<T>) -> MetricDensity<T> {
    let grid = phi.grid();
    let half = lit::<T>(0.5);
    let lap = phi.laplacian();
    let rho = lap.iter().enumerate().map(|(i, &l)| grid.rho0_at(i) + half * l).collect();
    MetricDensity::from_vec(grid.clone(), rho, T::one())
}

/// Ricci form density, -1/2 Delta log rho.
///
/// Evaluated as Ric(rho0) - 1/2 Delta_N log(rho / rho0) with Ric(rho0) = rho0
/// taken from the closed form, so only the smooth ratio is differenced.
pub fn ricci_density<T: Real>(metric: &MetricDensity<T>) -> Result<MetricDensity<T>, GeometryError> {
    let grid = metric.grid();
    let rho = metric.values();
    if let Some(index) = rho.iter().position(|&r| !(r > T::zero())) {
        return Err(GeometryError::NotPositive { index });
    }
    let ratio: Vec<T> = (0..rho.len()).map(|i| (rho[i] / grid.rho0_at(i)).ln()).collect();
    Ok(ricci_from_log_ratio(grid, &ratio))
}

/// Ricci density of the metric e^{v} rho0.
pub fn ricci_from_log_ratio<T: Real>(grid: &Arc<SphereGrid<T>>, log_ratio: &[T]) -> MetricDensity<T> {
    let half = lit::<T>(0.5);
    let lap = grid.laplacian(log_ratio);
    let ric = (0..lap.len()).map(|i| grid.rho0_at(i) - half * lap[i]).collect();
    MetricDensity::from_vec(grid.clone(), ric, T::one())
}

/// Ricci potential h: Ric(omega) - omega = i ddbar h, normalized to sup h = 0.
pub fn ricci_potential<T: Real>(metric: &MetricDensity<T>) -> Result<ScalarField<T>, GeometryError> {
    let grid = metric.grid();
    let ric = ricci_density(metric)?;
    let source: Vec<T> = ric.values().iter().zip(metric.values()).map(|(&a, &b)| a - b).collect();
    let defect = grid.chart_sum(&source) / grid.chart_sum(ric.values());
    if !(defect.abs() <= lit(CLASS_DEFECT_TOL)) {
        return Err(GeometryError::SolvabilityDefect { defect: defect.as_f64() });
    }
    let h = linalg::poisson_solve(grid, &source)?;
    let top = crate::real::max_of(&h);
    Ok(ScalarField::from_vec(grid.clone(), h.into_iter().map(|v| v - top).collect()))
}

/// Delta_omega f = (1/2 / rho) Delta_flat f.
pub fn laplace_beltrami<T: Real>(metric: &MetricDensity<T>, field: &ScalarField<T>) -> ScalarField<T> {
    let half = lit::<T>(0.5);
    let lap = field.laplacian();
    let v = lap.iter().zip(metric.values()).map(|(&l, &r)| half * l / r).collect();
    ScalarField::from_vec(field.grid().clone(), v)
}

/// Integral of f against the form, including the polar caps.
pub fn integrate<T: Real>(field: &ScalarField<T>, metric: &MetricDensity<T>) -> T {
    integrate_values(metric, field.values())
}

pub(crate) fn integrate_values<T: Real>(metric: &MetricDensity<T>, f: &[T]) -> T {
    let grid = metric.grid();
    let prod: Vec<T> = f.iter().zip(metric.values()).map(|(&a, &b)| a * b).collect();
    grid.chart_sum(&prod) + metric.class_scale() * grid.cap_sum(f)
}

/// Total mass of a form.
pub fn mass<T: Real>(metric: &MetricDensity<T>) -> T {
    metric.total_mass()
}

pub fn oscillation<T: Real>(field: &ScalarField<T>) -> T {
    field.max() - field.min()
}

/// Largest |f(a) - f(b)| / d(a, b)^gamma over node pairs at dyadic index
/// offsets along s and along phi, with d the chordal distance.
pub fn holder_quotient<T: Real>(field: &ScalarField<T>, gamma: T) -> T {
    let grid = field.grid();
    let v = field.values();
    let (ns, np) = (grid.ns(), grid.nphi());
    let emb: Vec<[T; 3]> = (0..grid.len()).map(|i| grid.node_embedding(i)).collect();
    let mut best = T::zero();
    let mut consider = |a: usize, b: usize| {
        let d = SphereGrid::chordal(emb[a], emb[b]);
        if d > T::zero() {
            best = best.max((v[a] - v[b]).abs() / d.powf(gamma));
        }
    };
    let mut step = 1;
    while step < ns {
        for i in 0..ns - step {
            for k in 0..np {
                consider(i * np + k, (i + step) * np + k);
            }
        }
        step *= 2;
    }
    let mut step = 1;
    while step <= np / 2 {
        for i in 0..ns {
            for k in 0..np {
                consider(i * np + k, i * np + (k + step) % np);
            }
        }
        step *= 2;
    }
    best
}

/// Gauss curvature of the reference metric, K = -1/2 Delta log rho0 / rho0, by
/// central differences of the sampled density.
///
/// Only rows with rho0 >= 1e-6 are returned: closer to the truncation the
/// roundoff in the differenced logarithm, ~eps |log rho0| / h^2, is no longer
/// small against rho0.
pub fn reference_curvature<T: Real>(grid: &SphereGrid<T>) -> Vec<T> {
    let logs: Vec<T> = grid.rho0_rows().iter().map(|r| r.ln()).collect();
    let h2 = grid.hs() * grid.hs();
    let half = lit::<T>(0.5);
    let floor = lit::<T>(1e-6);
    (1..grid.ns() - 1)
        .filter(|&i| grid.rho0_rows()[i] >= floor)
        .map(|i| {
            let d2 = (logs[i + 1] - lit::<T>(2.0) * logs[i] + logs[i - 1]) / h2;
            -half * d2 / grid.rho0_rows()[i]
        })
        .collect()
}

#[cfg(test)]
mod tests;
