//! Executable versions of the a priori estimates. Every check is read-only
//! and reports both sides of its inequality.

mod eigen;
mod random;

use std::fmt;

use crate::energy::{aubin_i, j_omega0, EnergyError};
use crate::geometry::{
    fubini_study, holder_quotient, oscillation, potential_density, reference_curvature, GeometryError, MetricDensity,
    ScalarField, SphereGrid,
};
use crate::linalg::LinearError;
use crate::ma_core::Background;
use crate::paths::{PathContext, PathState};
use crate::real::{lit, max_of, Real};

pub use eigen::{first_eigenvalue, first_eigenvalue_with, EigenEstimate, EigenOptions};
pub use random::{random_potential, RandomPotentialOptions};

#[derive(Debug, Clone, thiserror::Error)]
pub enum AuditError {
    #[error("potential is not Kähler-positive at node {index}")]
    NotKahler { index: usize },
    #[error("eigenvalue iteration did not converge in {iterations} iterations (last change {change:e})")]
    EigenNonConvergence { iterations: usize, change: f64 },
    #[error("neighbourhood radius {radius} exceeds half the minimum point distance {max}")]
    InvalidRadius { radius: f64, max: f64 },
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
    /// Trend data without an asserted bound.
    Report,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Report => "report",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditEntry {
    pub name: String,
    pub relation: Relation,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl AuditEntry {
    pub fn new(name: impl Into<String>, relation: Relation, measured: f64, bound: f64, tolerance: f64) -> Self {
        let passed = match relation {
            Relation::AtMost => measured <= bound + tolerance,
            Relation::AtLeast => measured >= bound - tolerance,
            Relation::Report => true,
        };
        AuditEntry { name: name.into(), relation, measured, bound, tolerance, passed }
    }

    pub fn report(name: impl Into<String>, measured: f64) -> Self {
        Self::new(name, Relation::Report, measured, f64::NAN, f64::NAN)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn push(&mut self, e: AuditEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, other: AuditReport) {
        self.entries.extend(other.entries);
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct AuditConfig {
    /// Relative part of the Lichnerowicz slack.
    pub lichnerowicz_rel_slack: f64,
    pub ricci_tol: f64,
    /// Relative tolerance of the mass check.
    pub mass_tol: f64,
    pub lp_exponents: Vec<f64>,
    pub holder_gamma: f64,
    pub eigen: EigenOptions,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            lichnerowicz_rel_slack: 0.02,
            ricci_tol: 1e-6,
            mass_tol: 1e-10,
            lp_exponents: vec![1.0, 1.5, 2.0],
            holder_gamma: 0.5,
            eigen: EigenOptions::default(),
        }
    }
}

fn kahler_density<T: Real>(phi: &ScalarField<T>) -> Result<MetricDensity<T>, AuditError> {
    let rho = potential_density(phi);
    match rho.values().iter().position(|&r| !(r > T::zero())) {
        Some(index) => Err(AuditError::NotKahler { index }),
        None => Ok(rho),
    }
}

/// Lambda = 2 sup K, with K the Gauss curvature of rho0 obtained by differencing the sampled density.
pub fn curvature_bound<T: Real>(grid: &SphereGrid<T>) -> T {
    lit::<T>(2.0) * max_of(&reference_curvature(grid))
}

/// Nodewise tr_{omega_phi} omega0 = rho0 / rho_phi against (2 Lambda + 1) exp((2 Lambda + 1) osc phi).
pub fn chern_lu_check<T: Real>(phi: &ScalarField<T>, lambda: T) -> Result<AuditEntry, AuditError> {
    let rho = kahler_density(phi)?;
    let grid = phi.grid();
    let tr = (0..grid.len()).map(|i| grid.rho0_at(i) / rho.values()[i]).fold(T::zero(), |m, x| m.max(x));
    let k = lit::<T>(2.0) * lambda + T::one();
    let bound = k * (k * oscillation(phi)).exp();
    Ok(AuditEntry::new("chern_lu", Relation::AtMost, tr.as_f64(), bound.as_f64(), 0.0))
}

/// 1/2 I <= J_omega0 <= I, as two entries.
pub fn aubin_compare_check<T: Real>(phi: &ScalarField<T>) -> Result<[AuditEntry; 2], AuditError> {
    kahler_density(phi)?;
    let i = aubin_i(phi).as_f64();
    let j0 = j_omega0(phi).as_f64();
    let tol = 1e3 * T::eps_f64() * (1.0 + i.abs());
    Ok([
        AuditEntry::new("aubin_lower", Relation::AtLeast, j0, 0.5 * i, tol),
        AuditEntry::new("aubin_upper", Relation::AtMost, j0, i, tol),
    ])
}

/// Total mass of omega_phi against class_scale * 4 pi.
pub fn mass_check<T: Real>(rho: &MetricDensity<T>, rel_tol: f64) -> AuditEntry {
    let target = rho.class_scale().as_f64() * 4.0 * std::f64::consts::PI;
    AuditEntry::new("mass", Relation::AtMost, (rho.total_mass().as_f64() - target).abs(), 0.0, rel_tol * target)
}

/// lambda_1(Delta_phi) >= t - slack with slack = rel * t + a two-grid estimate of the discretization error.
pub fn lichnerowicz_check<T: Real>(
    rho: &MetricDensity<T>,
    t: T,
    rel_slack: f64,
    opts: &EigenOptions,
) -> Result<(AuditEntry, EigenEstimate), AuditError> {
    let fine = first_eigenvalue_with(rho, opts)?;
    let coarse = first_eigenvalue_with(&restrict_density(rho)?, opts)?;
    let two_grid = (fine.value - coarse.value).abs() / 3.0;
    let t = t.as_f64();
    let slack = rel_slack * t + two_grid;
    Ok((AuditEntry::new("lichnerowicz", Relation::AtLeast, fine.value, t, slack), fine))
}

/// rho / rho0 interpolated linearly in s onto the coarsened grid.
fn restrict_density<T: Real>(rho: &MetricDensity<T>) -> Result<MetricDensity<T>, AuditError> {
    let fine = rho.grid();
    let coarse = std::sync::Arc::new(fine.coarsened()?);
    let (nf, pf) = (fine.ns(), fine.nphi());
    let pc = coarse.nphi();
    let stride = pf / pc;
    let ratio = |i: usize, k: usize| rho.values()[i * pf + k] / fine.rho0_rows()[i];
    let sf = fine.s_nodes();
    let mut out = Vec::with_capacity(coarse.len());
    for (ic, &s) in coarse.s_nodes().iter().enumerate() {
        let pos = ((s - sf[0]) / fine.hs()).as_f64().clamp(0.0, (nf - 1) as f64);
        let i0 = (pos.floor() as usize).min(nf - 2);
        let w = lit::<T>(pos - i0 as f64);
        for kc in 0..pc {
            let k = kc * stride;
            let r = ratio(i0, k) * (T::one() - w) + ratio(i0 + 1, k) * w;
            out.push(r * coarse.rho0_rows()[ic]);
        }
    }
    Ok(MetricDensity::new(coarse, out, rho.class_scale())?)
}

/// min over nodes of Ric - t rho, computed from the solved equation omega = exp(-t phi + G) omega0.
///
/// The remaining terms of the twisted equation are nonnegative, so this must be >= 0.
/// The two end rows are skipped: they carry the cap closure, which misrepresents
/// the e^{-|s|} cos(phi) harmonics of finite divisor points by O(e^{-L} / hs)
/// against a density of O(e^{-2L}).
pub fn ricci_certificate<T: Real>(phi: &ScalarField<T>, g: &ScalarField<T>, t: T) -> AuditEntry {
    let grid = phi.grid();
    let half = lit::<T>(0.5);
    let lap_g = g.laplacian();
    let rho = potential_density(phi);
    let m = (0..grid.len())
        .filter(|&i| !grid.is_end_row(i))
        .map(|i| {
            let rho0 = grid.rho0_at(i);
            let rhs = (g.values()[i] - t * phi.values()[i]).exp() * rho0;
            (T::one() - t) * rho0 - half * lap_g[i] + t * (rho.values()[i] - rhs)
        })
        .fold(T::infinity(), |a, b| a.min(b));
    AuditEntry::new("ricci_lower", Relation::AtLeast, m.as_f64(), 0.0, 0.0)
}

/// Distortion C = max(sup rho_phi / rho_model, sup rho_model / rho_phi) near each divisor point,
/// with rho_model = beta'^2 (|S|^2 + eps)^(beta' - 1) rho0 the smoothed cone model.
pub fn quasi_isometry_check<T: Real>(
    phi: &ScalarField<T>,
    bg: &Background<T>,
    angles: &[T],
    eps: T,
    radius: T,
) -> Result<Vec<AuditEntry>, AuditError> {
    let rho = kahler_density(phi)?;
    let grid = bg.grid();
    let comps = bg.divisor().components();
    let points: Vec<(usize, [T; 3])> = comps
        .iter()
        .enumerate()
        .flat_map(|(c, comp)| comp.points.iter().map(move |p| (c, p.embedding())))
        .collect();
    let mut min_d = T::infinity();
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            min_d = min_d.min(SphereGrid::chordal(points[a].1, points[b].1));
        }
    }
    let half = lit::<T>(0.5);
    if radius > half * min_d || !(radius > T::zero()) {
        return Err(AuditError::InvalidRadius { radius: radius.as_f64(), max: (half * min_d).as_f64() });
    }
    let mut out = Vec::new();
    for (idx, &(c, p)) in points.iter().enumerate() {
        let beta = angles[c];
        let logs = bg.log_norm_eps(c, eps)?;
        let mut worst = T::one();
        for i in 0..grid.len() {
            if SphereGrid::chordal(grid.node_embedding(i), p) >= radius {
                continue;
            }
            let model = beta * beta * ((beta - T::one()) * logs[i]).exp() * grid.rho0_at(i);
            let q = rho.values()[i] / model;
            worst = worst.max(q).max(T::one() / q);
        }
        out.push(AuditEntry::report(format!("quasi_isometry_{idx}"), worst.as_f64()));
    }
    Ok(out)
}

/// ||exp(G)||_{L^p(omega0)} for each p and the Hölder quotient of phi; trend data only.
pub fn kolodziej_monitor<T: Real>(g: &ScalarField<T>, phi: &ScalarField<T>, exponents: &[f64], gamma: f64) -> Vec<AuditEntry> {
    let rho0 = fubini_study(g.grid());
    let shift = g.max();
    let mut out: Vec<AuditEntry> = exponents
        .iter()
        .map(|&p| {
            let pt = lit::<T>(p);
            let f = g.map(|v| (pt * (v - shift)).exp());
            let norm = crate::geometry::integrate(&f, &rho0).as_f64().powf(1.0 / p) * shift.as_f64().exp();
            AuditEntry::report(format!("kolodziej_l{p}"), norm)
        })
        .collect();
    out.push(AuditEntry::report("holder_quotient", holder_quotient(phi, lit(gamma)).as_f64()));
    out
}

/// Every check on one recorded state.
pub fn audit_state<T: Real>(state: &PathState<T>, ctx: &PathContext<T>, cfg: &AuditConfig) -> Result<AuditReport, AuditError> {
    let phi = state.potential.field();
    let grid = phi.grid();
    let rho = kahler_density(phi)?;
    let mut report = AuditReport::default();
    let ric = ricci_certificate(phi, &state.g, state.t);
    let ric = AuditEntry::new(ric.name, ric.relation, ric.measured, ric.bound, cfg.ricci_tol);
    let ric_ok = ric.passed;
    report.push(ric);
    report.push(chern_lu_check(phi, curvature_bound(grid))?);
    for e in aubin_compare_check(phi)? {
        report.push(e);
    }
    report.push(mass_check(&rho, cfg.mass_tol));
    if ric_ok && state.t > T::zero() {
        report.push(lichnerowicz_check(&rho, state.t, cfg.lichnerowicz_rel_slack, &cfg.eigen)?.0);
    }
    let mu = ctx.bg.mu(&state.angles);
    let r = &state.report;
    for (k, &mp) in r.mu_primes.iter().enumerate() {
        if mp > mu {
            continue;
        }
        let lower = (mu - mp) * r.j_omega0 - r.coercivity_c[k];
        report.push(coercivity_entry(format!("coercivity_{}", mp.as_f64()), r.e_modified[k], lower));
    }
    report.extend(AuditReport { entries: kolodziej_monitor(&state.g, phi, &cfg.lp_exponents, cfg.holder_gamma) });
    Ok(report)
}

/// E~ >= (mu - mu') J_omega0 - C.
pub fn coercivity_entry<T: Real>(name: String, e_modified: T, lower: T) -> AuditEntry {
    let tol = 1e3 * T::eps_f64() * (1.0 + e_modified.as_f64().abs());
    AuditEntry::new(name, Relation::AtLeast, e_modified.as_f64(), lower.as_f64(), tol)
}
