use std::fmt;
use std::str::FromStr;

use crate::real::{lit, Real};

use super::GeometryError;

/// Which symmetry the stored fields are assumed to have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SymmetryMode {
    Full2d,
    S1Invariant,
    /// Rotation invariant and even under s -> -s.
    S1Z2Invariant,
}

impl SymmetryMode {
    pub fn is_rotation_invariant(self) -> bool {
        !matches!(self, SymmetryMode::Full2d)
    }

    pub fn name(self) -> &'static str {
        match self {
            SymmetryMode::Full2d => "full_2d",
            SymmetryMode::S1Invariant => "s1_invariant",
            SymmetryMode::S1Z2Invariant => "s1_z2_invariant",
        }
    }
}

impl fmt::Display for SymmetryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SymmetryMode {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full_2d" => Ok(SymmetryMode::Full2d),
            "s1_invariant" => Ok(SymmetryMode::S1Invariant),
            "s1_z2_invariant" => Ok(SymmetryMode::S1Z2Invariant),
            other => Err(GeometryError::InvalidGrid(format!("unknown symmetry mode `{other}`"))),
        }
    }
}

/// Cylinder chart w = s + i*phi of the sphere, truncated at |s| = L.
///
/// Nodes are stored s-major: node `i * nphi + k` sits at `(s_i, phi_k)`.
/// The s-direction uses the trapezoid rule, phi the uniform periodic rule.
/// The two polar caps |s| > L are represented by the end rows: each end node
/// carries the Fubini-Study mass of its share of the cap (`cap_weight`).
#[derive(Clone, Debug)]
pub struct SphereGrid<T: Real> {
    l: T,
    ns: usize,
    nphi: usize,
    mode: SymmetryMode,
    s: Vec<T>,
    phi: Vec<T>,
    hs: T,
    hphi: T,
    row_weight: Vec<T>,
    cap_weight: T,
    rho0: Vec<T>,
}

pub fn build_grid<T: Real>(
    l: T,
    ns: usize,
    nphi: usize,
    mode: SymmetryMode,
) -> Result<SphereGrid<T>, GeometryError> {
    SphereGrid::new(l, ns, nphi, mode)
}

impl<T: Real> SphereGrid<T> {
    pub fn new(l: T, ns: usize, nphi: usize, mode: SymmetryMode) -> Result<Self, GeometryError> {
        if !(l.is_finite() && l > T::zero()) {
            return Err(GeometryError::InvalidGrid(format!("half-length L must be positive, got {l}")));
        }
        if ns < 16 {
            return Err(GeometryError::InvalidGrid(format!("Ns must be at least 16, got {ns}")));
        }
        match mode {
            SymmetryMode::Full2d if nphi < 8 => {
                return Err(GeometryError::InvalidGrid(format!("full_2d needs Nphi >= 8, got {nphi}")));
            }
            SymmetryMode::S1Invariant | SymmetryMode::S1Z2Invariant if nphi != 1 => {
                return Err(GeometryError::InvalidGrid(format!(
                    "{mode} grids carry a single phi node, got Nphi = {nphi}"
                )));
            }
            _ => {}
        }

        let hs = lit::<T>(2.0) * l / T::from_usize(ns - 1).unwrap();
        let mut s = vec![T::zero(); ns];
        for j in 0..ns {
            s[j] = -l + hs * T::from_usize(j).unwrap();
        }
        // exact reflection symmetry of the nodes
        for j in 0..ns / 2 {
            let m = ns - 1 - j;
            let v = (s[m] - s[j]) / lit(2.0);
            s[j] = -v;
            s[m] = v;
        }
        if ns % 2 == 1 {
            s[ns / 2] = T::zero();
        }

        let two_pi = T::PI() + T::PI();
        let hphi = two_pi / T::from_usize(nphi).unwrap();
        let phi = (0..nphi).map(|k| hphi * T::from_usize(k).unwrap()).collect();

        let mut row_weight = vec![hs * hphi; ns];
        row_weight[0] = hs * hphi / lit(2.0);
        row_weight[ns - 1] = hs * hphi / lit(2.0);

        let cap_weight = hphi * (T::one() - l.tanh());
        let rho0 = s.iter().map(|&x| sech2(x)).collect();

        Ok(SphereGrid { l, ns, nphi, mode, s, phi, hs, hphi, row_weight, cap_weight, rho0 })
    }

    pub fn half_length(&self) -> T {
        self.l
    }
    pub fn ns(&self) -> usize {
        self.ns
    }
    pub fn nphi(&self) -> usize {
        self.nphi
    }
    pub fn mode(&self) -> SymmetryMode {
        self.mode
    }
    pub fn len(&self) -> usize {
        self.ns * self.nphi
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn hs(&self) -> T {
        self.hs
    }
    pub fn hphi(&self) -> T {
        self.hphi
    }
    pub fn s_nodes(&self) -> &[T] {
        &self.s
    }
    pub fn phi_nodes(&self) -> &[T] {
        &self.phi
    }
    pub fn is_2d(&self) -> bool {
        self.nphi > 1
    }

    #[inline]
    pub fn row(&self, idx: usize) -> usize {
        idx / self.nphi
    }
    #[inline]
    pub fn col(&self, idx: usize) -> usize {
        idx % self.nphi
    }
    #[inline]
    pub fn s_at(&self, idx: usize) -> T {
        self.s[idx / self.nphi]
    }
    #[inline]
    pub fn phi_at(&self, idx: usize) -> T {
        self.phi[idx % self.nphi]
    }

    /// Chart-area quadrature weight of a node. These sum to 2L * 2pi.
    #[inline]
    pub fn weight(&self, idx: usize) -> T {
        self.row_weight[idx / self.nphi]
    }

    pub fn row_weights(&self) -> &[T] {
        &self.row_weight
    }

    /// Reference cap mass attached to each node of the two end rows.
    pub fn cap_weight(&self) -> T {
        self.cap_weight
    }

    #[inline]
    pub fn is_end_row(&self, idx: usize) -> bool {
        let r = idx / self.nphi;
        r == 0 || r == self.ns - 1
    }

    /// sech^2 s at each s row.
    pub fn rho0_rows(&self) -> &[T] {
        &self.rho0
    }

    #[inline]
    pub fn rho0_at(&self, idx: usize) -> T {
        self.rho0[idx / self.nphi]
    }

    /// sum_i w_i * f_i over chart weights only.
    pub fn chart_sum(&self, f: &[T]) -> T {
        let mut acc = T::zero();
        for r in 0..self.ns {
            let w = self.row_weight[r];
            let row = &f[r * self.nphi..(r + 1) * self.nphi];
            acc = acc + w * row.iter().copied().sum::<T>();
        }
        acc
    }

    /// Node values of the polar caps' share, as a sum over end rows.
    pub fn cap_sum(&self, f: &[T]) -> T {
        let n = self.nphi;
        let first: T = f[..n].iter().copied().sum();
        let last: T = f[(self.ns - 1) * n..].iter().copied().sum();
        self.cap_weight * (first + last)
    }

    /// Index of the mirror node under s -> -s.
    #[inline]
    pub fn mirror(&self, idx: usize) -> usize {
        let r = idx / self.nphi;
        (self.ns - 1 - r) * self.nphi + idx % self.nphi
    }

    /// Averages mirror pairs in z2 mode; no-op otherwise.
    pub fn symmetrize(&self, v: &mut [T]) {
        if self.mode != SymmetryMode::S1Z2Invariant {
            return;
        }
        let half = lit::<T>(0.5);
        for r in 0..self.ns / 2 {
            let m = self.ns - 1 - r;
            let a = (v[r] + v[m]) * half;
            v[r] = a;
            v[m] = a;
        }
    }

    /// Flat Laplacian d2/ds2 + d2/dphi2 with homogeneous Neumann closure in s.
    pub fn laplacian(&self, v: &[T]) -> Vec<T> {
        self.laplacian_with_slopes(v, T::zero(), T::zero())
    }

    /// Flat Laplacian with prescribed ds-slopes at s = -L and s = +L (ghost-node closure).
    pub fn laplacian_with_slopes(&self, v: &[T], slope_lo: T, slope_hi: T) -> Vec<T> {
        let (ns, np) = (self.ns, self.nphi);
        let two = lit::<T>(2.0);
        let ihs2 = T::one() / (self.hs * self.hs);
        let ihp2 = T::one() / (self.hphi * self.hphi);
        let mut out = vec![T::zero(); v.len()];
        for i in 0..ns {
            for k in 0..np {
                let idx = i * np + k;
                let c = v[idx];
                let dss = if i == 0 {
                    two * (v[idx + np] - c) * ihs2 - two * slope_lo / self.hs
                } else if i == ns - 1 {
                    two * (v[idx - np] - c) * ihs2 + two * slope_hi / self.hs
                } else {
                    (v[idx + np] - two * c + v[idx - np]) * ihs2
                };
                let dpp = if np > 1 {
                    let kp = if k + 1 == np { i * np } else { idx + 1 };
                    let km = if k == 0 { i * np + np - 1 } else { idx - 1 };
                    (v[kp] - two * c + v[km]) * ihp2
                } else {
                    T::zero()
                };
                out[idx] = dss + dpp;
            }
        }
        out
    }

    /// Point on the unit sphere for chart position (s, phi).
    pub fn embed(s: T, phi: T) -> [T; 3] {
        let r = T::one() / s.cosh();
        [r * phi.cos(), r * phi.sin(), s.tanh()]
    }

    pub fn node_embedding(&self, idx: usize) -> [T; 3] {
        Self::embed(self.s_at(idx), self.phi_at(idx))
    }

    /// Chordal distance on the unit sphere (area 4pi, matching the reference metric).
    pub fn chordal(a: [T; 3], b: [T; 3]) -> T {
        let d0 = a[0] - b[0];
        let d1 = a[1] - b[1];
        let d2 = a[2] - b[2];
        (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
    }

    /// A grid with the same mode and extent but coarser resolution.
    pub fn coarsened(&self) -> Result<Self, GeometryError> {
        let ns = (self.ns / 2).max(16);
        let nphi = if self.nphi > 1 { (self.nphi / 2).max(8) } else { 1 };
        Self::new(self.l, ns, nphi, self.mode)
    }

    pub fn describe(&self) -> String {
        format!("L={} Ns={} Nphi={} mode={}", self.l, self.ns, self.nphi, self.mode)
    }
}

#[inline]
pub(crate) fn sech2<T: Real>(x: T) -> T {
    let c = x.cosh();
    T::one() / (c * c)
}

/// log(1 + e^x) without overflow.
#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
