//! Continuity-method solvers for conical Kähler–Einstein metrics on the Riemann sphere.
//!
//! The sphere is discretized in the cylinder chart `z = exp(s + i phi)`. The
//! crate solves the smoothed Monge–Ampère equations along the two continuity
//! paths (twisted path in `t`, then cone-angle deformation), evaluates the
//! energy functionals in closed form and audits every state against the
//! a priori estimates.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod audit;
pub mod energy;
pub mod geometry;
pub mod linalg;
pub mod ma_core;
pub mod paths;
mod real;

pub use real::Real;

pub type Grid = geometry::SphereGrid<f64>;
pub type Field = geometry::ScalarField<f64>;
pub type Density = geometry::MetricDensity<f64>;
pub type Divisor = geometry::DivisorConfig<f64>;
pub type Potential = ma_core::Potential<f64>;
pub type State = paths::PathState<f64>;
pub type Trace = paths::Trace<f64>;
pub type Report = audit::AuditReport;

pub type GridF32 = geometry::SphereGrid<f32>;
pub type FieldF32 = geometry::ScalarField<f32>;
