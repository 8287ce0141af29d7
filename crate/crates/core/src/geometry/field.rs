use std::sync::Arc;

use crate::real::{max_of, min_of, sup_abs, Real};

use super::grid::SphereGrid;
use super::GeometryError;

/// Real values on the nodes of a grid.
#[derive(Clone, Debug)]
pub struct ScalarField<T: Real> {
    grid: Arc<SphereGrid<T>>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    /// Checks length and finiteness, then symmetrizes in z2 mode.
    pub fn new(grid: Arc<SphereGrid<T>>, mut values: Vec<T>) -> Result<Self, GeometryError> {
        if values.len() != grid.len() {
            return Err(GeometryError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { index: i });
        }
        grid.symmetrize(&mut values);
        Ok(ScalarField { grid, values })
    }

    /// Trusted constructor for values produced by the crate's own operators.
    pub(crate) fn from_vec(grid: Arc<SphereGrid<T>>, mut values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        grid.symmetrize(&mut values);
        ScalarField { grid, values }
    }

    pub fn zeros(grid: Arc<SphereGrid<T>>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: Arc<SphereGrid<T>>, c: T) -> Self {
        let n = grid.len();
        ScalarField { grid, values: vec![c; n] }
    }

    /// Samples `f(s, phi)` at every node.
    pub fn from_fn(grid: Arc<SphereGrid<T>>, f: impl Fn(T, T) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.s_at(i), grid.phi_at(i))).collect();
        Self::from_vec(grid, values)
    }

    pub fn grid(&self) -> &Arc<SphereGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        let v = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::from_vec(self.grid.clone(), v)
    }

    pub fn add_scalar(&self, c: T) -> Self {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn sup_norm(&self) -> T {
        sup_abs(&self.values)
    }

    pub fn max(&self) -> T {
        max_of(&self.values)
    }

    pub fn min(&self) -> T {
        min_of(&self.values)
    }

    /// sup |self - other|.
    pub fn distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// sup |self - other - c| minimized over constants c (half the oscillation of the difference).
    pub fn distance_mod_constant(&self, other: &Self) -> T {
        let d: Vec<T> = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        (max_of(&d) - min_of(&d)) / (T::one() + T::one())
    }

    pub fn laplacian(&self) -> Vec<T> {
        self.grid.laplacian(&self.values)
    }
}

/// Density of a real (1,1)-form against (i/2) dw ^ dw-bar.
///
/// `class_scale` is the multiple of the reference class the form lives in;
/// it fixes the mass that the polar caps contribute to integrals.
#[derive(Clone, Debug)]
pub struct MetricDensity<T: Real> {
    grid: Arc<SphereGrid<T>>,
    rho: Vec<T>,
    class_scale: T,
}

impl<T: Real> MetricDensity<T> {
    pub fn new(grid: Arc<SphereGrid<T>>, rho: Vec<T>, class_scale: T) -> Result<Self, GeometryError> {
        if rho.len() != grid.len() {
            return Err(GeometryError::LengthMismatch { expected: grid.len(), got: rho.len() });
        }
        if let Some(i) = rho.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { index: i });
        }
        Ok(Self::from_vec(grid, rho, class_scale))
    }

    pub(crate) fn from_vec(grid: Arc<SphereGrid<T>>, mut rho: Vec<T>, class_scale: T) -> Self {
        grid.symmetrize(&mut rho);
        MetricDensity { grid, rho, class_scale }
    }

    pub fn grid(&self) -> &Arc<SphereGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.rho
    }

    pub fn class_scale(&self) -> T {
        self.class_scale
    }

    pub fn is_positive(&self) -> bool {
        self.rho.iter().all(|&r| r > T::zero())
    }

    /// min over nodes of rho / rho0.
    pub fn min_ratio_to_reference(&self) -> T {
        (0..self.rho.len())
            .map(|i| self.rho[i] / self.grid.rho0_at(i))
            .fold(T::infinity(), |m, x| m.min(x))
    }

    pub fn total_mass(&self) -> T {
        self.grid.chart_sum(&self.rho) + self.class_scale * self.grid.cap_sum(&vec![T::one(); self.rho.len()])
    }
}
