use std::sync::Arc;

use crate::real::{lit, Real};

use super::field::{MetricDensity, ScalarField};
use super::grid::{softplus, SphereGrid, SymmetryMode};
use super::GeometryError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DivisorPoint<T: Real> {
    /// z = 0, i.e. s -> -infinity.
    Pole0,
    /// z = infinity, i.e. s -> +infinity.
    PoleInf,
    /// Finite point z = exp(s + i phi).
    Chart { s: T, phi: T },
}

impl<T: Real> DivisorPoint<T> {
    pub fn embedding(&self) -> [T; 3] {
        match *self {
            DivisorPoint::Pole0 => [T::zero(), T::zero(), -T::one()],
            DivisorPoint::PoleInf => [T::zero(), T::zero(), T::one()],
            DivisorPoint::Chart { s, phi } => SphereGrid::embed(s, phi),
        }
    }

    /// log |S_p|^2 for the degree-one section vanishing at p (curvature omega0 / 2).
    pub fn log_norm_sq(&self, s: T, phi: T) -> T {
        let two = lit::<T>(2.0);
        match *self {
            DivisorPoint::Pole0 => -softplus(-two * s),
            DivisorPoint::PoleInf => -softplus(two * s),
            DivisorPoint::Chart { s: sp, phi: pp } => {
                // |z - p|^2 = e^{s+sp} (4 sinh^2((s-sp)/2) + 4 sin^2((phi-pp)/2))
                let a = ((s - sp) / two).sinh();
                let b = ((phi - pp) / two).sin();
                let q = lit::<T>(4.0) * (a * a + b * b);
                s + sp + q.ln() - softplus(two * s) - softplus(two * sp)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivisorMode {
    /// The points together form one smooth anticanonical divisor with a single angle.
    AnticanonicalSmooth,
    /// Each point is its own component with its own angle.
    Snc,
}

/// One component D_i of the divisor: the points it contains, its weight and its angle.
#[derive(Clone, Debug)]
pub struct Component<T: Real> {
    pub points: Vec<DivisorPoint<T>>,
    pub lambda: T,
    pub beta: T,
}

#[derive(Clone, Debug)]
pub struct DivisorConfig<T: Real> {
    points: Vec<DivisorPoint<T>>,
    lambdas: Vec<T>,
    betas: Vec<T>,
    mode: DivisorMode,
}

const DISTINCT_TOL: f64 = 1e-9;

impl<T: Real> DivisorConfig<T> {
    pub fn new(
        points: Vec<DivisorPoint<T>>,
        lambdas: Vec<T>,
        betas: Vec<T>,
        mode: DivisorMode,
    ) -> Result<Self, GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidDivisor(m));
        if points.is_empty() {
            return bad("divisor needs at least one point".into());
        }
        if lambdas.len() != points.len() || betas.len() != points.len() {
            return bad(format!(
                "{} points but {} lambdas and {} betas",
                points.len(),
                lambdas.len(),
                betas.len()
            ));
        }
        for (i, a) in points.iter().enumerate() {
            if let DivisorPoint::Chart { s, phi } = a {
                if !(s.is_finite() && phi.is_finite()) {
                    return bad(format!("point {i} has non-finite chart coordinates"));
                }
            }
            for b in &points[i + 1..] {
                if SphereGrid::chordal(a.embedding(), b.embedding()) < lit(DISTINCT_TOL) {
                    return bad(format!("points {a:?} and {b:?} coincide"));
                }
            }
        }
        let half = lit::<T>(0.5);
        for (i, &l) in lambdas.iter().enumerate() {
            if !(l.is_finite() && l > T::zero()) {
                return bad(format!("lambda_{i} must be positive, got {l}"));
            }
            // a single point is cut out by a section of O(1), whose curvature is omega0 / 2
            if (l - half).abs() > lit(1e-12) {
                return bad(format!("lambda_{i} = {l}: a single point carries weight 1/2"));
            }
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > T::zero() && b <= T::one()) {
                return bad(format!("beta_{i} must lie in (0, 1], got {b}"));
            }
        }
        if mode == DivisorMode::AnticanonicalSmooth {
            let total: T = lambdas.iter().copied().sum();
            if (total - T::one()).abs() > lit(1e-12) {
                return bad(format!("anticanonical divisor needs sum of lambdas = 1, got {total}"));
            }
            if betas.iter().any(|&b| (b - betas[0]).abs() > lit(1e-14)) {
                return bad("a smooth anticanonical divisor carries a single cone angle".into());
            }
        }
        let cfg = DivisorConfig { points, lambdas, betas, mode };
        let mu = cfg.mu();
        if !(mu > T::zero()) {
            return bad(format!("twisted class is not positive: mu = {mu}"));
        }
        Ok(cfg)
    }

    pub fn two_pole(beta: T) -> Result<Self, GeometryError> {
        let half = lit::<T>(0.5);
        Self::new(
            vec![DivisorPoint::Pole0, DivisorPoint::PoleInf],
            vec![half, half],
            vec![beta, beta],
            DivisorMode::AnticanonicalSmooth,
        )
    }

    /// k equatorial points at phi = 2 pi j / k, each with weight 1/2.
    pub fn equatorial(betas: Vec<T>) -> Result<Self, GeometryError> {
        let k = betas.len();
        let two_pi = T::PI() + T::PI();
        let points = (0..k)
            .map(|j| DivisorPoint::Chart {
                s: T::zero(),
                phi: two_pi * T::from_usize(j).unwrap() / T::from_usize(k).unwrap(),
            })
            .collect();
        Self::new(points, vec![lit(0.5); k], betas, DivisorMode::Snc)
    }

    pub fn points(&self) -> &[DivisorPoint<T>] {
        &self.points
    }
    pub fn lambdas(&self) -> &[T] {
        &self.lambdas
    }
    pub fn betas(&self) -> &[T] {
        &self.betas
    }
    pub fn mode(&self) -> DivisorMode {
        self.mode
    }

    pub fn is_two_pole(&self) -> bool {
        self.points.len() == 2
            && self.points.contains(&DivisorPoint::Pole0)
            && self.points.contains(&DivisorPoint::PoleInf)
    }

    /// mu = 1 - sum lambda_i (1 - beta_i).
    pub fn mu(&self) -> T {
        T::one()
            - self
                .lambdas
                .iter()
                .zip(&self.betas)
                .fold(T::zero(), |acc, (&l, &b)| acc + l * (T::one() - b))
    }

    pub fn components(&self) -> Vec<Component<T>> {
        match self.mode {
            DivisorMode::AnticanonicalSmooth => vec![Component {
                points: self.points.clone(),
                lambda: self.lambdas.iter().copied().sum(),
                beta: self.betas[0],
            }],
            DivisorMode::Snc => self
                .points
                .iter()
                .zip(self.lambdas.iter().zip(&self.betas))
                .map(|(&p, (&l, &b))| Component { points: vec![p], lambda: l, beta: b })
                .collect(),
        }
    }

    pub fn n_components(&self) -> usize {
        match self.mode {
            DivisorMode::AnticanonicalSmooth => 1,
            DivisorMode::Snc => self.points.len(),
        }
    }

    /// Per-component angles.
    pub fn angles(&self) -> Vec<T> {
        self.components().iter().map(|c| c.beta).collect()
    }

    /// Same points and weights with new per-component angles.
    pub fn with_angles(&self, angles: &[T]) -> Result<Self, GeometryError> {
        if angles.len() != self.n_components() {
            return Err(GeometryError::InvalidDivisor(format!(
                "{} angles for {} components",
                angles.len(),
                self.n_components()
            )));
        }
        let betas = match self.mode {
            DivisorMode::AnticanonicalSmooth => vec![angles[0]; self.points.len()],
            DivisorMode::Snc => angles.to_vec(),
        };
        Self::new(self.points.clone(), self.lambdas.clone(), betas, self.mode)
    }

    /// Checks that the grid can represent this divisor.
    pub fn check_grid(&self, grid: &SphereGrid<T>) -> Result<(), GeometryError> {
        let finite = self.points.iter().any(|p| matches!(p, DivisorPoint::Chart { .. }));
        if finite && grid.mode().is_rotation_invariant() {
            return Err(GeometryError::UnrepresentablePoint(format!(
                "finite divisor points break rotation invariance of a {} grid",
                grid.mode()
            )));
        }
        if self.is_two_pole() && grid.mode() != SymmetryMode::S1Z2Invariant {
            return Err(GeometryError::UnrepresentablePoint(
                "the two-pole divisor admits the rotation field z d/dz; use s1_z2_invariant".into(),
            ));
        }
        if grid.mode() == SymmetryMode::S1Z2Invariant && !self.is_two_pole() {
            return Err(GeometryError::UnrepresentablePoint(
                "s1_z2_invariant grids require the divisor {POLE_0, POLE_INF}".into(),
            ));
        }
        for p in &self.points {
            if let DivisorPoint::Chart { s, .. } = *p {
                if s.abs() >= grid.half_length() {
                    return Err(GeometryError::UnrepresentablePoint(format!(
                        "point at s = {s} lies outside the chart |s| < {}",
                        grid.half_length()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Stable log |S_i|^2 of component i at every node, with the nodes within one
/// cell of a divisor point flagged (`true` = excluded from singular quadrature).
pub fn log_divisor_norm<T: Real>(
    grid: &Arc<SphereGrid<T>>,
    cfg: &DivisorConfig<T>,
    i: usize,
) -> Result<(Vec<T>, Vec<bool>), GeometryError> {
    let comps = cfg.components();
    let comp = comps
        .get(i)
        .ok_or_else(|| GeometryError::InvalidDivisor(format!("component {i} out of range")))?;
    cfg.check_grid(grid)?;
    let n = grid.len();
    let mut logs = vec![T::zero(); n];
    let mut mask = vec![false; n];
    for idx in 0..n {
        let (s, phi) = (grid.s_at(idx), grid.phi_at(idx));
        let mut acc = T::zero();
        for p in &comp.points {
            acc = acc + p.log_norm_sq(s, phi);
            if let DivisorPoint::Chart { s: sp, phi: pp } = *p {
                if near_point(grid, s, phi, sp, pp) {
                    mask[idx] = true;
                }
            }
        }
        logs[idx] = acc;
    }
    // a node sitting exactly on a point is masked out of quadratures; keep it finite
    let floor = logs.iter().filter(|v| v.is_finite()).fold(T::infinity(), |a, &v| a.min(v));
    for v in logs.iter_mut().filter(|v| !v.is_finite()) {
        *v = floor;
    }
    Ok((logs, mask))
}

fn near_point<T: Real>(grid: &SphereGrid<T>, s: T, phi: T, sp: T, pp: T) -> bool {
    let two_pi = T::PI() + T::PI();
    let mut d = (phi - pp).abs() % two_pi;
    if d > T::PI() {
        d = two_pi - d;
    }
    let slack = lit::<T>(1e-9);
    (s - sp).abs() <= grid.hs() * (T::one() + slack) && d <= grid.hphi() * (T::one() + slack)
}

/// |S_i|^2 of component i.
pub fn divisor_norm_squared<T: Real>(
    grid: &Arc<SphereGrid<T>>,
    cfg: &DivisorConfig<T>,
    i: usize,
) -> Result<ScalarField<T>, GeometryError> {
    let comps = cfg.components();
    let comp = comps
        .get(i)
        .ok_or_else(|| GeometryError::InvalidDivisor(format!("component {i} out of range")))?;
    cfg.check_grid(grid)?;
    Ok(ScalarField::from_fn(grid.clone(), |s, phi| {
        comp.points.iter().fold(T::zero(), |acc, p| acc + p.log_norm_sq(s, phi)).exp()
    }))
}

/// log(|S_i|^2 + eps) evaluated without forming |S_i|^2 near its zeros.
pub fn log_norm_eps<T: Real>(log_norm: &[T], eps: T) -> Vec<T> {
    let le = eps.ln();
    log_norm
        .iter()
        .map(|&a| {
            let (hi, lo) = if a > le { (a, le) } else { (le, a) };
            hi + (lo - hi).exp().ln_1p()
        })
        .collect()
}

/// Smoothed current chi_eps^i = lambda_i omega0 + i ddbar log(|S_i|^2 + eps).
pub fn chi_epsilon<T: Real>(
    grid: &Arc<SphereGrid<T>>,
    cfg: &DivisorConfig<T>,
    i: usize,
    eps: T,
) -> Result<MetricDensity<T>, GeometryError> {
    if !(eps > T::zero() && eps <= T::one()) {
        return Err(GeometryError::InvalidEpsilon(eps.as_f64()));
    }
    let lambda = cfg.components()[i.min(cfg.n_components() - 1)].lambda;
    let (logs, _) = log_divisor_norm(grid, cfg, i)?;
    let le = log_norm_eps(&logs, eps);
    let lap = grid.laplacian(&le);
    let half = lit::<T>(0.5);
    let rho = (0..grid.len()).map(|k| lambda * grid.rho0_at(k) + half * lap[k]).collect();
    Ok(MetricDensity::from_vec(grid.clone(), rho, lambda))
}
