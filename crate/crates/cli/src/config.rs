use std::path::{Path, PathBuf};
use std::sync::Arc;

use cone_ke::geometry::{build_grid, DivisorConfig, DivisorMode, DivisorPoint, SphereGrid, SymmetryMode};
use cone_ke::ma_core::NewtonOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub grid: GridBlock,
    pub divisor: DivisorBlock,
    pub path: PathBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub half_length: f64,
    pub ns: usize,
    pub nphi: usize,
    pub symmetry_mode: String,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DivisorKind {
    /// {0, infinity} with one angle.
    TwoPole,
    /// Points forming one smooth anticanonical divisor with one angle.
    Anticanonical,
    /// Each point its own component.
    Snc,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PointSpec {
    Pole { pole: PoleName },
    Chart { s: f64, phi: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PoleName {
    Zero,
    Infinity,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DivisorBlock {
    pub mode: DivisorKind,
    #[serde(default)]
    pub points: Vec<PointSpec>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    /// Closed-form football potential at the configured angle (two-pole only).
    Football,
    /// Seed potential 0.
    Model,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathBlock {
    /// Target angles of separate angle runs (two-pole and anticanonical divisors).
    #[serde(default)]
    pub targets: Vec<f64>,
    /// Target angle vector of the successive legs (snc divisors).
    #[serde(default)]
    pub target_angles: Vec<f64>,
    pub eps: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_min_dt")]
    pub min_dt: f64,
    /// Audited mu' of the modified functional; defaults to {mu - 0.05, mu - 0.1}.
    #[serde(default)]
    pub audit_mu_primes: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<SeedKind>,
}

fn default_dt() -> f64 {
    0.02
}

fn default_min_dt() -> f64 {
    1e-4
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub emit_plots: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { directory: PathBuf::from("cone-ke-out"), emit_plots: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub newton_residual: f64,
    pub newton_max_iter: usize,
    pub ladder_limit: f64,
    pub lichnerowicz_rel_slack: f64,
    pub ricci: f64,
    pub mass: f64,
    /// Seeded random potentials added to the Aubin and coercivity audits.
    pub random_potentials: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            newton_residual: 1e-10,
            newton_max_iter: 50,
            ladder_limit: 1e-4,
            lichnerowicz_rel_slack: 0.02,
            ricci: 1e-6,
            mass: 1e-10,
            random_potentials: 20,
        }
    }
}

/// A validated configuration with the core objects built.
#[derive(Clone, Debug)]
pub struct Plan {
    pub config: RunConfig,
    pub grid: Arc<SphereGrid<f64>>,
    pub divisor: DivisorConfig<f64>,
    pub angles: Vec<f64>,
    pub mu: f64,
    pub mu_primes: Vec<f64>,
    pub seed: SeedKind,
    pub stages: Vec<Stage>,
}

/// One continuity run inside an epsilon cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Twisted,
    /// Separate angle run from the twisted terminal state.
    Target { index: usize, beta: f64 },
    /// Successive leg moving `component` to `beta`.
    Leg { component: usize, beta: f64 },
}

impl Stage {
    pub fn name(&self) -> String {
        match self {
            Stage::Twisted => "star_beta".into(),
            Stage::Target { index, .. } => format!("target{index}"),
            Stage::Leg { component, .. } => format!("leg{component}"),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    /// Checks every invariant before anything is solved.
    pub fn validate(&self) -> Result<Plan, CliError> {
        if self.version != CONFIG_VERSION {
            return Err(cfg_err(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version)));
        }
        let g = &self.grid;
        let mode: SymmetryMode = g.symmetry_mode.parse().map_err(|e| cfg_err(format!("{e}")))?;
        let grid = Arc::new(build_grid::<f64>(g.half_length, g.ns, g.nphi, mode).map_err(|e| cfg_err(e.to_string()))?);

        let d = &self.divisor;
        let divisor = match d.mode {
            DivisorKind::TwoPole => {
                if !d.points.is_empty() || !d.lambdas.is_empty() || d.betas.len() != 1 {
                    return Err(cfg_err("two_pole divisor takes exactly one beta and no points or lambdas"));
                }
                DivisorConfig::two_pole(d.betas[0])
            }
            DivisorKind::Anticanonical | DivisorKind::Snc => {
                let points = d
                    .points
                    .iter()
                    .map(|p| match *p {
                        PointSpec::Pole { pole: PoleName::Zero } => DivisorPoint::Pole0,
                        PointSpec::Pole { pole: PoleName::Infinity } => DivisorPoint::PoleInf,
                        PointSpec::Chart { s, phi } => DivisorPoint::Chart { s, phi },
                    })
                    .collect::<Vec<_>>();
                let betas = if d.mode == DivisorKind::Anticanonical && d.betas.len() == 1 {
                    vec![d.betas[0]; points.len()]
                } else {
                    d.betas.clone()
                };
                let m = if d.mode == DivisorKind::Snc { DivisorMode::Snc } else { DivisorMode::AnticanonicalSmooth };
                DivisorConfig::new(points, d.lambdas.clone(), betas, m)
            }
        }
        .map_err(|e| cfg_err(e.to_string()))?;
        divisor.check_grid(&grid).map_err(|e| cfg_err(e.to_string()))?;
        let angles = divisor.angles();
        let mu = divisor.mu();

        let p = &self.path;
        if p.eps.is_empty() {
            return Err(cfg_err("path.eps must list at least one epsilon"));
        }
        if p.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(cfg_err("every epsilon must lie in (0, 1]"));
        }
        if p.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(cfg_err("path.eps must be strictly decreasing"));
        }
        if !(p.min_dt > 0.0 && p.min_dt <= p.dt && p.dt.is_finite()) {
            return Err(cfg_err(format!("need 0 < min_dt <= dt, got {} and {}", p.min_dt, p.dt)));
        }
        let mut stages = vec![Stage::Twisted];
        if divisor.mode() == DivisorMode::Snc {
            if !p.targets.is_empty() {
                return Err(cfg_err("snc divisors take path.target_angles, not path.targets"));
            }
            if !p.target_angles.is_empty() {
                if p.target_angles.len() != angles.len() {
                    return Err(cfg_err(format!("{} target angles for {} components", p.target_angles.len(), angles.len())));
                }
                if let Some(b) = p.target_angles.iter().find(|&&b| !(b > 0.0 && b <= 1.0)) {
                    return Err(cfg_err(format!("target angle {b} outside (0, 1]")));
                }
                divisor.with_angles(&p.target_angles).map_err(|e| cfg_err(format!("target angles: {e}")))?;
                for (c, &b) in p.target_angles.iter().enumerate() {
                    stages.push(Stage::Leg { component: c, beta: b });
                }
            }
        } else {
            if !p.target_angles.is_empty() {
                return Err(cfg_err("path.target_angles is for snc divisors; use path.targets"));
            }
            if let Some(b) = p.targets.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
                return Err(cfg_err(format!("target angle {b} outside (0, 1)")));
            }
            for (i, &b) in p.targets.iter().enumerate() {
                stages.push(Stage::Target { index: i, beta: b });
            }
        }
        let mu_primes = match &p.audit_mu_primes {
            Some(v) => v.clone(),
            // rounded so that column labels read 0.65 rather than 0.6499999999999999
            None => [mu - 0.05, mu - 0.1].into_iter().map(|m| (m * 1e12).round() / 1e12).filter(|&m| m > 0.0).collect(),
        };
        if let Some(m) = mu_primes.iter().find(|&&m| !(m > 0.0 && m <= mu)) {
            return Err(cfg_err(format!("audited mu' = {m} must lie in (0, mu = {mu}]")));
        }
        let seed = match (p.seed, divisor.is_two_pole()) {
            (Some(SeedKind::Football), false) => return Err(cfg_err("the football seed needs the two_pole divisor")),
            (Some(s), _) => s,
            (None, true) => SeedKind::Football,
            (None, false) => SeedKind::Model,
        };
        let t = &self.tolerances;
        if !(t.newton_residual > 0.0 && t.ladder_limit > 0.0 && t.ricci >= 0.0 && t.mass >= 0.0) {
            return Err(cfg_err("tolerances must be positive"));
        }
        Ok(Plan { config: self.clone(), grid, divisor, angles, mu, mu_primes, seed, stages })
    }
}

impl Plan {
    pub fn newton(&self) -> NewtonOptions<f64> {
        NewtonOptions {
            tol_residual: self.config.tolerances.newton_residual,
            max_iter: self.config.tolerances.newton_max_iter,
            ..NewtonOptions::default()
        }
    }

    pub fn eps(&self) -> &[f64] {
        &self.config.path.eps
    }

    /// Angles at the start of `stage`.
    pub fn stage_start_angles(&self, stage: usize) -> Vec<f64> {
        let mut a = self.angles.clone();
        for s in &self.stages[1..stage.max(1)] {
            if let Stage::Leg { component, beta } = *s {
                a[component] = beta;
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(path: &str, divisor: &str, grid: &str) -> Result<Plan, CliError> {
        let text = format!(r#"{{"version":1,"grid":{grid},"divisor":{divisor},"path":{path}}}"#);
        RunConfig::parse(&text)?.validate()
    }

    const Z2: &str = r#"{"half_length":12,"ns":128,"nphi":1,"symmetry_mode":"s1_z2_invariant"}"#;
    const FULL: &str = r#"{"half_length":12,"ns":64,"nphi":24,"symmetry_mode":"full_2d"}"#;
    const POLES: &str = r#"{"mode":"two_pole","betas":[0.7]}"#;
    const SNC: &str = r#"{"mode":"snc","points":[{"s":0,"phi":0},{"s":0,"phi":3}],"lambdas":[0.5,0.5],"betas":[0.8,0.8]}"#;

    #[test]
    fn two_pole_plan() {
        let p = with(r#"{"targets":[0.8,0.6],"eps":[0.01,0.001]}"#, POLES, Z2).unwrap();
        assert_eq!(p.stages.len(), 3);
        assert_eq!(p.mu_primes, vec![0.65, 0.6]);
        assert_eq!(p.seed, SeedKind::Football);
    }

    #[test]
    fn snc_plan_and_leg_angles() {
        let p = with(r#"{"target_angles":[0.9,0.7],"eps":[0.01]}"#, SNC, FULL).unwrap();
        assert_eq!(p.seed, SeedKind::Model);
        assert_eq!(p.stage_start_angles(1), vec![0.8, 0.8]);
        assert_eq!(p.stage_start_angles(2), vec![0.9, 0.8]);
        assert_eq!(p.stage_start_angles(3), vec![0.9, 0.7]);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            (r#"{"eps":[0.01,0.1]}"#, POLES, Z2),
            (r#"{"eps":[]}"#, POLES, Z2),
            (r#"{"targets":[1.0],"eps":[0.01]}"#, POLES, Z2),
            (r#"{"eps":[0.01],"audit_mu_primes":[0.9]}"#, POLES, Z2),
            (r#"{"eps":[0.01],"dt":0.01,"min_dt":0.1}"#, POLES, Z2),
            (r#"{"eps":[0.01],"seed":"football"}"#, SNC, FULL),
            (r#"{"target_angles":[0.9],"eps":[0.01]}"#, SNC, FULL),
            (r#"{"targets":[0.9],"eps":[0.01]}"#, SNC, FULL),
            (r#"{"eps":[0.01]}"#, SNC, Z2),
            (r#"{"eps":[0.01]}"#, POLES, r#"{"half_length":12,"ns":128,"nphi":1,"symmetry_mode":"round"}"#),
        ];
        for (path, div, grid) in bad {
            assert!(matches!(with(path, div, grid), Err(CliError::Config(_))), "{path} {div} {grid}");
        }
        let v2 = r#"{"version":2,"grid":{"half_length":12,"ns":128,"nphi":1,"symmetry_mode":"s1_z2_invariant"},"divisor":{"mode":"two_pole","betas":[0.7]},"path":{"eps":[0.1]}}"#;
        assert!(RunConfig::parse(v2).unwrap().validate().is_err());
    }
}
