//! The one-dimensional complex Monge–Ampère equation in semilinear form,
//!
//! ```text
//! rho0 + 1/2 Delta_flat phi = exp(-t phi + G) rho0,
//! ```
//!
//! its damped Newton solver, and the t = 0 volume problems that produce the
//! smoothed volume potentials and the reference potentials of the path.

mod newton;
mod volume;

use std::sync::Arc;

use crate::geometry::{
    fubini_study, integrate, mass, potential_density, GeometryError, MetricDensity, ScalarField, SphereGrid,
};
use crate::linalg::LinearError;
use crate::real::{lit, Real};

pub use newton::newton_solve;
pub use volume::{smooth_volume_family, solve_reference, solve_volume, Background, Reference, VolumeFamily, VolumeProfile};

#[derive(Debug, Clone, thiserror::Error)]
pub enum MaError {
    #[error("Newton did not converge in {iterations} iterations (last sup residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },
    #[error("line search could not keep the iterate in the Kähler cone at iteration {iteration}")]
    KahlerConeViolation { iteration: usize },
    #[error("linearization is singular or its solve stagnated: {0}")]
    SingularLinearization(LinearError),
    #[error("initial guess is not Kähler-positive at node {index}")]
    NotKahler { index: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Whether the additive constant in the right-hand side is an unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gauge {
    /// Solve for c in exp(G + c) jointly with a mean-zero potential.
    FreeConstant,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    SupZero,
    MeanZero,
    Raw,
}

/// One equation: omega_phi = exp(-t phi + G) omega0.
#[derive(Clone, Debug)]
pub struct MAProblem<T: Real> {
    t: T,
    g: ScalarField<T>,
    gauge: Gauge,
}

impl<T: Real> MAProblem<T> {
    pub fn new(t: T, g: ScalarField<T>, gauge: Gauge) -> Result<Self, MaError> {
        if !(t >= T::zero() && t.is_finite()) {
            return Err(MaError::InvalidProblem(format!("t must be finite and >= 0, got {t}")));
        }
        if t == T::zero() && gauge != Gauge::FreeConstant {
            return Err(MaError::InvalidProblem("t = 0 requires the free-constant gauge".into()));
        }
        if let Some(index) = g.values().iter().position(|v| !v.exp().is_finite()) {
            return Err(MaError::InvalidProblem(format!("exp(G) overflows at node {index}")));
        }
        Ok(MAProblem { t, g, gauge })
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn g(&self) -> &ScalarField<T> {
        &self.g
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn grid(&self) -> &Arc<SphereGrid<T>> {
        self.g.grid()
    }

    /// exp(-t phi + G) rho0 at every node.
    pub fn rhs_density(&self, phi: &[T]) -> Vec<T> {
        let grid = self.grid();
        let g = self.g.values();
        (0..phi.len()).map(|i| (g[i] - self.t * phi[i]).exp() * grid.rho0_at(i)).collect()
    }
}

/// A Kähler potential together with the convention that fixed its constant.
#[derive(Clone, Debug)]
pub struct Potential<T: Real> {
    field: ScalarField<T>,
    normalization: Normalization,
}

impl<T: Real> Potential<T> {
    /// Fails unless rho0 + 1/2 Delta phi > 0 at every node.
    pub fn new(field: ScalarField<T>, normalization: Normalization) -> Result<Self, MaError> {
        let rho = potential_density(&field);
        if let Some(index) = rho.values().iter().position(|&r| !(r > T::zero())) {
            return Err(MaError::NotKahler { index });
        }
        Ok(Potential { field, normalization })
    }

    pub(crate) fn from_field(field: ScalarField<T>, normalization: Normalization) -> Self {
        Potential { field, normalization }
    }

    pub fn zero(grid: Arc<SphereGrid<T>>) -> Self {
        Potential { field: ScalarField::zeros(grid), normalization: Normalization::SupZero }
    }

    pub fn field(&self) -> &ScalarField<T> {
        &self.field
    }

    pub fn values(&self) -> &[T] {
        self.field.values()
    }

    pub fn into_field(self) -> ScalarField<T> {
        self.field
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn density(&self) -> MetricDensity<T> {
        potential_density(&self.field)
    }

    /// Re-gauged copy. `MeanZero` means mean zero against omega0.
    pub fn normalized(&self, to: Normalization) -> Self {
        let shift = match to {
            Normalization::SupZero => -self.field.max(),
            Normalization::MeanZero => {
                let rho0 = fubini_study(self.field.grid());
                -integrate(&self.field, &rho0) / mass(&rho0)
            }
            Normalization::Raw => T::zero(),
        };
        Potential { field: self.field.add_scalar(shift), normalization: to }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions<T> {
    /// Sup-norm tolerance on the density residual.
    pub tol_residual: T,
    pub max_iter: usize,
    /// Step reduction factor of the backtracking line search.
    pub backtrack: T,
    pub max_backtracks: usize,
    /// Trial iterates must keep rho_phi >= floor * rho0 at every node.
    pub positivity_floor: T,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        let tol = lit::<T>(1e-10).max(T::epsilon() * lit(1e3));
        NewtonOptions {
            tol_residual: tol,
            max_iter: 50,
            backtrack: lit(0.5),
            max_backtracks: 30,
            positivity_floor: lit(0.01),
        }
    }
}

/// Result of a solve.
#[derive(Clone, Debug)]
pub struct Solution<T: Real> {
    pub potential: Potential<T>,
    /// The solved constant c for the free-constant gauge, 0 otherwise.
    pub constant: T,
    pub iterations: usize,
    pub residual: T,
    pub linear_iterations: usize,
}

/// R(phi) = rho0 + 1/2 Delta_flat phi - exp(-t phi + G) rho0.
pub fn ma_residual<T: Real>(problem: &MAProblem<T>, phi: &ScalarField<T>) -> ScalarField<T> {
    let lhs = potential_density(phi);
    let rhs = problem.rhs_density(phi.values());
    let r = lhs.values().iter().zip(&rhs).map(|(&a, &b)| a - b).collect();
    ScalarField::from_vec(phi.grid().clone(), r)
}

/// Diagonal of the zeroth-order part of the Jacobian, t exp(-t phi + G) rho0.
pub fn linearization_diagonal<T: Real>(problem: &MAProblem<T>, phi: &ScalarField<T>) -> Vec<T> {
    problem.rhs_density(phi.values()).into_iter().map(|f| problem.t * f).collect()
}

/// Directional derivative of [`ma_residual`] at phi along v.
pub fn apply_linearization<T: Real>(problem: &MAProblem<T>, phi: &ScalarField<T>, v: &[T]) -> Vec<T> {
    let d = linearization_diagonal(problem, phi);
    crate::linalg::apply_helmholtz(phi.grid(), &d, v)
}

#[cfg(test)]
mod tests;
