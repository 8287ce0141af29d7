use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cone_ke::audit::{
    aubin_compare_check, audit_state, coercivity_entry, random_potential, AuditConfig, AuditReport, RandomPotentialOptions,
};
use cone_ke::energy::{coercivity_constant, j_omega0, modified_log_mabuchi};
use cone_ke::geometry::ScalarField;
use cone_ke::ma_core::{Background, Normalization, Potential, VolumeProfile};
use cone_ke::paths::{
    epsilon_ladder, football_potential, i_drift_monitor, LadderOptions, PathContext, PathError, PathOptions, PathSchedule,
    PathSpec,
};
use cone_ke::State;
use rayon::prelude::*;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{Plan, RunConfig, SeedKind, Stage};
use crate::output::{self, create_dir, io_err, CsvSink};
use crate::CliError;

/// Process-level run controls.
#[derive(Clone, Copy, Debug, Default)]
pub struct Control {
    /// Stop after this many recorded states in each cell, leaving its checkpoint behind.
    pub halt_after: Option<usize>,
    /// Base seed of the random audit potentials.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Complete,
    Halted,
}

/// Summary of a finished deform or resume.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub complete: bool,
    pub audit_failures: usize,
}

fn cell_dir(out: &Path, k: usize) -> PathBuf {
    out.join("cells").join(format!("e{k}"))
}

fn stage_file(out: &Path, k: usize, s: usize) -> PathBuf {
    cell_dir(out, k).join(format!("stage{s}.ckpt"))
}

pub fn audit_config(plan: &Plan) -> AuditConfig {
    let t = &plan.config.tolerances;
    AuditConfig { lichnerowicz_rel_slack: t.lichnerowicz_rel_slack, ricci_tol: t.ricci, mass_tol: t.mass, ..AuditConfig::default() }
}

fn path_options(plan: &Plan) -> PathOptions<f64> {
    PathOptions { newton: plan.newton(), mu_primes: plan.mu_primes.clone(), lambda1: false }
}

fn solver_err(run: String, eps: f64, e: PathError) -> CliError {
    let t = match &e {
        PathError::StepCollapse { last_t, .. } => *last_t,
        _ => f64::NAN,
    };
    CliError::Solver { run, eps, t, message: e.to_string() }
}

pub fn prepare_context(plan: &Plan, k: usize) -> Result<Arc<PathContext<f64>>, CliError> {
    let eps = plan.eps()[k];
    let bg = Background::new(plan.grid.clone(), plan.divisor.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let profile = match plan.seed {
        SeedKind::Football => VolumeProfile::Seeded(football_potential(&plan.grid, plan.angles[0])),
        SeedKind::Model => VolumeProfile::Model,
    };
    PathContext::prepare(Arc::new(bg), eps, &profile, &plan.newton())
        .map(Arc::new)
        .map_err(|e| solver_err(format!("e{k}/prepare"), eps, e))
}

/// Stage whose final state starts `stage`.
fn predecessor(plan: &Plan, stage: usize) -> usize {
    match plan.stages[stage] {
        Stage::Target { .. } => 0,
        _ => stage - 1,
    }
}

/// The twisted terminal state shifted by -c_norm / mu starts an angle run; later legs start where the previous ended.
fn stage_start(ctx: &PathContext<f64>, from_twisted: bool, values: Vec<f64>) -> Result<Potential<f64>, CliError> {
    let mut f = ScalarField::new(ctx.grid().clone(), values).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    if from_twisted {
        f = f.add_scalar(-ctx.reference.c_norm / ctx.mu());
    }
    Potential::new(f, Normalization::Raw).map_err(|e| CliError::Checkpoint(e.to_string()))
}

pub fn stage_spec(plan: &Plan, ctx: &Arc<PathContext<f64>>, stage: usize, start: Potential<f64>) -> Result<PathSpec<f64>, PathError> {
    match plan.stages[stage] {
        Stage::Twisted => PathSpec::star_beta(ctx.clone()),
        Stage::Target { beta, .. } => PathSpec::angle_leg(ctx.clone(), &plan.angles, 0, beta, start),
        Stage::Leg { component, beta } => {
            PathSpec::angle_leg(ctx.clone(), &plan.stage_start_angles(stage), component, beta, start)
        }
    }
}

fn load_stage_final(plan: &Plan, out: &Path, k: usize, s: usize) -> Result<Vec<f64>, CliError> {
    let ck = Checkpoint::read(&stage_file(out, k, s))?;
    if ck.values.len() != plan.grid.len() {
        return Err(CliError::Checkpoint(format!("stage file has {} values for {} nodes", ck.values.len(), plan.grid.len())));
    }
    Ok(ck.values)
}

/// Where a cell picks up: a stage, and optionally a point inside it.
#[derive(Clone, Debug)]
pub struct ResumePoint {
    pub stage: usize,
    pub t: f64,
    pub next_dt: f64,
    pub values: Vec<f64>,
}

struct Sinks {
    trace: CsvSink,
    audits: CsvSink,
    functionals: CsvSink,
}

struct CellRun<'a> {
    plan: &'a Plan,
    out: &'a Path,
    k: usize,
    ctx: Arc<PathContext<f64>>,
    opts: PathOptions<f64>,
    audit: AuditConfig,
    recorded: usize,
    halt_after: Option<usize>,
}

impl CellRun<'_> {
    fn eps(&self) -> f64 {
        self.plan.eps()[self.k]
    }

    fn run_id(&self, stage: usize) -> String {
        format!("e{}/{}", self.k, self.plan.stages[stage].name())
    }

    /// Audits, streams and checkpoints one state. Returns true when the halt count is reached.
    fn record(&mut self, sinks: &mut Sinks, stage: usize, s: &State) -> Result<bool, CliError> {
        let id = self.run_id(stage);
        let report = audit_state(s, &self.ctx, &self.audit).map_err(|e| CliError::Solver {
            run: id.clone(),
            eps: s.eps,
            t: s.t,
            message: format!("audit could not be evaluated: {e}"),
        })?;
        let lambda1 = report.get("lichnerowicz").map(|e| e.measured);
        sinks.trace.row(&output::trace_row(&id, s, lambda1))?;
        for row in output::audit_rows(&id, s.eps, s.t, &report) {
            sinks.audits.row(&row)?;
        }
        Checkpoint::new(
            &self.plan.config,
            self.k,
            s.eps,
            stage,
            self.plan.stages[stage].name(),
            s.t,
            s.next_dt,
            s.angles.clone(),
            s.potential.values().to_vec(),
        )
        .write(&cell_dir(self.out, self.k).join("checkpoint.ckpt"))?;
        self.recorded += 1;
        Ok(self.halt_after.is_some_and(|n| self.recorded >= n))
    }

    fn finish_stage(&self, sinks: &mut Sinks, stage: usize, s: &State) -> Result<(), CliError> {
        let id = self.run_id(stage);
        sinks.functionals.row(&output::functional_row(&id, s.t, &s.report))?;
        Checkpoint::new(
            &self.plan.config,
            self.k,
            s.eps,
            stage,
            self.plan.stages[stage].name(),
            s.t,
            s.next_dt,
            s.angles.clone(),
            s.potential.values().to_vec(),
        )
        .write(&stage_file(self.out, self.k, stage))?;
        if self.plan.config.output.emit_plots {
            let dir = self.out.join("plots");
            create_dir(&dir)?;
            output::write_plot(&dir.join(format!("e{}_{}.dat", self.k, self.plan.stages[stage].name())), s)?;
        }
        Ok(())
    }

    fn run(&mut self, resume: Option<ResumePoint>) -> Result<CellStatus, CliError> {
        let dir = cell_dir(self.out, self.k);
        let n_angles = self.plan.angles.len();
        let mut sinks = match &resume {
            None => {
                create_dir(&dir)?;
                Sinks {
                    trace: CsvSink::create(&dir.join("trace.csv"), &output::trace_header(n_angles, &self.plan.mu_primes))?,
                    audits: CsvSink::create(&dir.join("audits.csv"), &output::audit_header())?,
                    functionals: CsvSink::create(
                        &dir.join("functional_report.csv"),
                        &output::functional_header(n_angles, &self.plan.mu_primes),
                    )?,
                }
            }
            Some(_) => Sinks {
                trace: CsvSink::append(&dir.join("trace.csv"))?,
                audits: CsvSink::append(&dir.join("audits.csv"))?,
                functionals: CsvSink::append(&dir.join("functional_report.csv"))?,
            },
        };
        let first = resume.as_ref().map_or(0, |r| r.stage);
        let mut resume = resume;
        let mut twisted_final: Option<Vec<f64>> = None;
        let mut prev_final: Option<Vec<f64>> = None;
        for stage in first..self.plan.stages.len() {
            let id = self.run_id(stage);
            let start = if stage == 0 {
                Potential::zero(self.ctx.grid().clone())
            } else {
                let pred = predecessor(self.plan, stage);
                let cached = if pred == 0 { twisted_final.clone() } else { prev_final.clone() };
                let values = match cached {
                    Some(v) => v,
                    None => load_stage_final(self.plan, self.out, self.k, pred)?,
                };
                stage_start(&self.ctx, pred == 0, values)?
            };
            let spec = stage_spec(self.plan, &self.ctx, stage, start).map_err(|e| solver_err(id.clone(), self.eps(), e))?;
            let (a, b) = spec.t_range();
            let p = &self.plan.config.path;
            let schedule = PathSchedule::new(a, b).with_steps(p.dt, p.min_dt);

            let eps = self.eps();
            let mut failure: Option<CliError> = None;
            let mut halted = false;
            let mut last: Option<State> = None;
            let mut stored: Option<(f64, f64, ScalarField<f64>)> = None;
            let opts = self.opts.clone();
            let grid = self.ctx.grid().clone();
            let trace = {
                let mut observer = |s: &State| -> ControlFlow<()> {
                    match self.record(&mut sinks, stage, s) {
                        Ok(stop) => {
                            last = Some(s.clone());
                            halted = stop;
                            if stop {
                                ControlFlow::Break(())
                            } else {
                                ControlFlow::Continue(())
                            }
                        }
                        Err(e) => {
                            failure = Some(e);
                            ControlFlow::Break(())
                        }
                    }
                };
                match resume.take() {
                    Some(r) => {
                        let phi = ScalarField::new(grid, r.values)
                            .map_err(|e| CliError::Checkpoint(e.to_string()))?;
                        let tr = spec.resume(r.t, &phi, r.next_dt, &schedule, &opts, &mut observer);
                        stored = Some((r.t, r.next_dt, phi));
                        tr
                    }
                    None => spec.run(&schedule, &opts, &mut observer),
                }
            };
            if let Some(e) = failure {
                return Err(e);
            }
            let trace = trace.map_err(|e| solver_err(id.clone(), eps, e))?;
            if trace.states.is_empty() {
                // resumed exactly at the end of the stage
                if let Some((t, dt, phi)) = stored {
                    let pot = Potential::new(phi, Normalization::Raw).map_err(|e| CliError::Checkpoint(e.to_string()))?;
                    last = Some(spec.state(t, pot, &self.opts, 0, dt).map_err(|e| solver_err(id.clone(), eps, e))?);
                }
            }
            if halted || !trace.meta.completed {
                log::info!("{id}: halted after {} states", self.recorded);
                return Ok(CellStatus::Halted);
            }
            let end = last.expect("a completed stage has a final state");
            self.finish_stage(&mut sinks, stage, &end)?;
            let values = end.potential.values().to_vec();
            if stage == 0 {
                twisted_final = Some(values.clone());
            }
            prev_final = Some(values);
            log::info!("{id}: reached t = {} with sup |phi| = {:e}", end.t, end.sup_norm);
        }
        Ok(CellStatus::Complete)
    }
}

fn run_cell(plan: &Plan, out: &Path, k: usize, resume: Option<ResumePoint>, ctl: &Control) -> Result<CellStatus, CliError> {
    let ctx = prepare_context(plan, k)?;
    CellRun {
        plan,
        out,
        k,
        ctx,
        opts: path_options(plan),
        audit: audit_config(plan),
        recorded: 0,
        halt_after: ctl.halt_after,
    }
    .run(resume)
}

fn cell_complete(plan: &Plan, out: &Path, k: usize) -> bool {
    stage_file(out, k, plan.stages.len() - 1).exists()
}

/// Runs every epsilon cell concurrently, then merges the artifacts.
pub fn deform(config: &RunConfig, out: &Path, ctl: &Control) -> Result<RunSummary, CliError> {
    let plan = config.validate()?;
    create_dir(out)?;
    let statuses: Vec<Result<CellStatus, CliError>> =
        (0..plan.eps().len()).into_par_iter().map(|k| run_cell(&plan, out, k, None, ctl)).collect();
    conclude(&plan, out, ctl, statuses)
}

/// Continues the cell of `checkpoint` from its stored state, then any other unfinished cells.
pub fn resume(checkpoint: &Path, out: &Path, ctl: &Control) -> Result<RunSummary, CliError> {
    let ck = Checkpoint::read(checkpoint)?;
    let plan = ck.header.config.validate()?;
    if ck.values.len() != plan.grid.len() {
        return Err(CliError::Checkpoint(format!("checkpoint has {} values for {} nodes", ck.values.len(), plan.grid.len())));
    }
    let h = &ck.header;
    if h.cell >= plan.eps().len() || h.stage >= plan.stages.len() || plan.eps()[h.cell] != h.eps {
        return Err(CliError::Checkpoint("checkpoint does not belong to its embedded config".into()));
    }
    let point = ResumePoint { stage: h.stage, t: h.t, next_dt: h.next_dt, values: ck.values.clone() };
    let statuses: Vec<Result<CellStatus, CliError>> = (0..plan.eps().len())
        .into_par_iter()
        .map(|k| {
            if k == h.cell {
                run_cell(&plan, out, k, Some(point.clone()), ctl)
            } else if cell_complete(&plan, out, k) {
                Ok(CellStatus::Complete)
            } else {
                resume_cell_from_disk(&plan, out, k, ctl)
            }
        })
        .collect();
    conclude(&plan, out, ctl, statuses)
}

fn resume_cell_from_disk(plan: &Plan, out: &Path, k: usize, ctl: &Control) -> Result<CellStatus, CliError> {
    let path = cell_dir(out, k).join("checkpoint.ckpt");
    if !path.exists() {
        return run_cell(plan, out, k, None, ctl);
    }
    let ck = Checkpoint::read(&path)?;
    let h = ck.header;
    run_cell(plan, out, k, Some(ResumePoint { stage: h.stage, t: h.t, next_dt: h.next_dt, values: ck.values }), ctl)
}

fn conclude(plan: &Plan, out: &Path, ctl: &Control, statuses: Vec<Result<CellStatus, CliError>>) -> Result<RunSummary, CliError> {
    let mut halted = false;
    for s in statuses {
        match s? {
            CellStatus::Complete => {}
            CellStatus::Halted => halted = true,
        }
    }
    if halted {
        return Ok(RunSummary { complete: false, audit_failures: 0 });
    }
    finalize(plan, out, ctl)
}

/// Merged CSVs, random-potential audits, the epsilon ladder, final checkpoints and run metadata.
fn finalize(plan: &Plan, out: &Path, ctl: &Control) -> Result<RunSummary, CliError> {
    let n = plan.eps().len();
    let parts = |name: &str| (0..n).map(|k| cell_dir(out, k).join(name)).collect::<Vec<_>>();
    output::merge_csv(&out.join("trace.csv"), &parts("trace.csv"))?;
    output::merge_csv(&out.join("audits.csv"), &parts("audits.csv"))?;
    output::merge_csv(&out.join("functional_report.csv"), &parts("functional_report.csv"))?;

    let last_cell = n - 1;
    let ctx = prepare_context(plan, last_cell)?;
    let random = random_audits(plan, &ctx, ctl.seed)?;
    {
        let mut sink = CsvSink::append(&out.join("audits.csv"))?;
        for (i, rep) in random.iter().enumerate() {
            for row in output::audit_rows(&format!("random{i}"), ctx.eps, f64::NAN, rep) {
                sink.row(&row)?;
            }
        }
    }

    let ladder = ladder_summary(plan, out)?;
    let last_stage = plan.stages.len() - 1;
    for s in 0..plan.stages.len() {
        let src = stage_file(out, last_cell, s);
        let dst = out.join(format!("final_potential_{}.ckpt", plan.stages[s].name()));
        std::fs::copy(&src, &dst).map_err(|e| io_err(&dst, e))?;
    }
    let dst = out.join("final_potential.ckpt");
    std::fs::copy(stage_file(out, last_cell, last_stage), &dst).map_err(|e| io_err(&dst, e))?;

    let audits = std::fs::read_to_string(out.join("audits.csv")).map_err(|e| io_err(&out.join("audits.csv"), e))?;
    let audit_failures = audits.lines().skip(1).filter(|l| l.ends_with(",false")).count();
    let drift = drift_summary(out)?;
    let meta = json!({
        "config": plan.config,
        "random_potential_seed": ctl.seed,
        "random_potentials": plan.config.tolerances.random_potentials,
        "stages": plan.stages.iter().map(Stage::name).collect::<Vec<_>>(),
        "mu": plan.mu,
        "mu_primes": plan.mu_primes,
        "audit_failures": audit_failures,
        "ladder": ladder.0,
        "max_i_drift": drift,
    });
    let run_json = out.join("run.json");
    std::fs::write(&run_json, serde_json::to_string_pretty(&meta).expect("json") + "\n").map_err(|e| io_err(&run_json, e))?;
    if let Some(e) = ladder.1 {
        return Err(e);
    }
    Ok(RunSummary { complete: true, audit_failures })
}

/// Aubin and coercivity checks on seeded random potentials.
fn random_audits(plan: &Plan, ctx: &PathContext<f64>, seed: u64) -> Result<Vec<AuditReport>, CliError> {
    let opts = RandomPotentialOptions::default();
    let mu = plan.mu;
    let consts = plan
        .mu_primes
        .iter()
        .map(|&mp| coercivity_constant(&ctx.bg, &plan.angles, mp, ctx.phi_eps.field()).map(|c| (mp, c)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Solver { run: "random".into(), eps: ctx.eps, t: f64::NAN, message: e.to_string() })?;
    (0..plan.config.tolerances.random_potentials)
        .map(|i| {
            let p = random_potential(ctx.grid(), seed.wrapping_add(i as u64), &opts);
            let err = |m: String| CliError::Solver { run: format!("random{i}"), eps: ctx.eps, t: f64::NAN, message: m };
            let mut rep = AuditReport::default();
            for e in aubin_compare_check(&p).map_err(|e| err(e.to_string()))? {
                rep.push(e);
            }
            let j0 = j_omega0(&p);
            for &(mp, c) in &consts {
                let e = modified_log_mabuchi(&p, &ctx.bg, &plan.angles, mp, ctx.eps, ctx.phi_eps.field())
                    .map_err(|e| err(e.to_string()))?;
                rep.push(coercivity_entry(format!("coercivity_{mp}"), e, (mu - mp) * j0 - c));
            }
            Ok(rep)
        })
        .collect()
}

/// Writes ladder.csv for every non-twisted stage (the twisted stage when there is none).
fn ladder_summary(plan: &Plan, out: &Path) -> Result<(serde_json::Value, Option<CliError>), CliError> {
    let n = plan.eps().len();
    let stages: Vec<usize> = if plan.stages.len() > 1 { (1..plan.stages.len()).collect() } else { vec![0] };
    let mut text = String::from("stage,eps,sup_norm,gap_to_next,limit_distance,converged\n");
    let mut meta = Vec::new();
    let mut failure = None;
    let opts = LadderOptions { limit_tol: plan.config.tolerances.ladder_limit, holder_gamma: 0.5 };
    for &s in &stages {
        let name = plan.stages[s].name();
        let finals = (0..n)
            .map(|k| {
                let v = load_stage_final(plan, out, k, s)?;
                let f = ScalarField::new(plan.grid.clone(), v).map_err(|e| CliError::Checkpoint(e.to_string()))?;
                Potential::new(f, Normalization::Raw).map_err(|e| CliError::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let end_angles = plan.stage_start_angles(s + 1);
        let exponent = match plan.stages[s] {
            Stage::Target { beta, .. } => beta,
            _ => end_angles.iter().copied().fold(f64::INFINITY, f64::min),
        };
        let eps = plan.eps();
        let result = epsilon_ladder(eps, exponent, &opts, |e| {
            let k = eps.iter().position(|&x| x == e).expect("rung of the configured ladder");
            Ok(finals[k].clone())
        });
        match result {
            Ok(l) => {
                let limit_distance = l.limit.as_ref().map(|lim| lim.distance(l.last().field()));
                for k in 0..n {
                    let gap = l.gaps.get(k).copied().unwrap_or(f64::NAN);
                    let ld = if k == n - 1 { limit_distance.unwrap_or(f64::NAN) } else { f64::NAN };
                    text.push_str(&format!(
                        "{name},{},{},{},{},{}\n",
                        output::num(eps[k]),
                        output::num(l.potentials[k].field().sup_norm()),
                        output::num(gap),
                        output::num(ld),
                        l.converged
                    ));
                }
                meta.push(json!({"stage": name, "gaps": l.gaps, "converged": l.converged, "holder": l.holder}));
            }
            Err(e) => {
                meta.push(json!({"stage": name, "error": e.to_string()}));
                failure.get_or_insert(CliError::Solver {
                    run: format!("ladder/{name}"),
                    eps: eps[n - 1],
                    t: f64::NAN,
                    message: e.to_string(),
                });
            }
        }
    }
    let path = out.join("ladder.csv");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok((serde_json::Value::Array(meta), failure))
}

/// max over rows of I - I(first row of the cell), read back from the merged trace.
fn drift_summary(out: &Path) -> Result<f64, CliError> {
    let path = out.join("trace.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = header.iter().position(|&h| h == "I").expect("trace has an I column");
    let mut base: Option<(String, f64)> = None;
    let mut worst = 0.0f64;
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let run = f[0].to_string();
        let i: f64 = f[col].parse().unwrap_or(f64::NAN);
        match &base {
            Some((r, b)) if *r == run => worst = worst.max(i - b),
            _ => base = Some((run, i)),
        }
    }
    Ok(worst)
}

/// Re-audits a stored state. `config` overrides the embedded one.
pub fn audit(checkpoint: &Path, config: Option<&RunConfig>, out: Option<&Path>) -> Result<AuditReport, CliError> {
    let ck = Checkpoint::read(checkpoint)?;
    let cfg = config.cloned().unwrap_or_else(|| ck.header.config.clone());
    let plan = cfg.validate()?;
    if ck.values.len() != plan.grid.len() {
        return Err(CliError::Checkpoint(format!("checkpoint has {} values for {} nodes", ck.values.len(), plan.grid.len())));
    }
    let h = &ck.header;
    let k = plan
        .eps()
        .iter()
        .position(|&e| e == h.eps)
        .ok_or_else(|| CliError::Config(format!("epsilon {} of the checkpoint is not in the config", h.eps)))?;
    let stage = plan
        .stages
        .iter()
        .position(|s| s.name() == h.stage_name)
        .ok_or_else(|| CliError::Config(format!("stage {} of the checkpoint is not in the config", h.stage_name)))?;
    let ctx = prepare_context(&plan, k)?;
    let field = ScalarField::new(plan.grid.clone(), ck.values.clone()).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let pot = Potential::new(field, Normalization::Raw).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let id = format!("e{k}/{}", h.stage_name);
    let spec = stage_spec(&plan, &ctx, stage, pot.clone()).map_err(|e| solver_err(id.clone(), h.eps, e))?;
    let state = spec.state(h.t, pot, &path_options(&plan), 0, h.next_dt).map_err(|e| solver_err(id.clone(), h.eps, e))?;
    let report = audit_state(&state, &ctx, &audit_config(&plan))
        .map_err(|e| CliError::Solver { run: id.clone(), eps: h.eps, t: h.t, message: e.to_string() })?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut sink = CsvSink::create(&dir.join("audits.csv"), &output::audit_header())?;
        for row in output::audit_rows(&id, h.eps, h.t, &report) {
            sink.row(&row)?;
        }
    }
    Ok(report)
}

/// One row per (epsilon, stage) cell; failures are reported, not fatal.
pub fn sweep(config: &RunConfig, out: &Path) -> Result<usize, CliError> {
    let plan = config.validate()?;
    create_dir(out)?;
    let n = plan.eps().len();
    let p = &plan.config.path;
    let opts = path_options(&plan);
    let rows: Vec<Vec<Vec<String>>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let eps = plan.eps()[k];
            let ctx = match prepare_context(&plan, k) {
                Ok(c) => c,
                Err(e) => return vec![sweep_row(k, eps, "prepare", "failed", f64::NAN, None, &e.to_string())],
            };
            let mut rows = Vec::new();
            let mut twisted: Option<Vec<f64>> = None;
            let mut prev: Option<Vec<f64>> = None;
            for stage in 0..plan.stages.len() {
                let name = plan.stages[stage].name();
                let start = if stage == 0 {
                    Ok(Potential::zero(ctx.grid().clone()))
                } else {
                    let pred = predecessor(&plan, stage);
                    match if pred == 0 { twisted.clone() } else { prev.clone() } {
                        Some(v) => stage_start(&ctx, pred == 0, v),
                        None => {
                            rows.push(sweep_row(k, eps, &name, "skipped", f64::NAN, None, "predecessor failed"));
                            continue;
                        }
                    }
                };
                let result = start.and_then(|s| {
                    let spec = stage_spec(&plan, &ctx, stage, s).map_err(|e| solver_err(name.clone(), eps, e))?;
                    let (a, b) = spec.t_range();
                    spec.run(&PathSchedule::new(a, b).with_steps(p.dt, p.min_dt), &opts, &mut |_| ControlFlow::Continue(()))
                        .map_err(|e| solver_err(name.clone(), eps, e))
                });
                match result {
                    Ok(tr) => {
                        let last = tr.last().expect("nonempty trace");
                        let drift = i_drift_monitor(&tr, 0).ok().map(|d| d.max_drift);
                        rows.push(sweep_row(k, eps, &name, "ok", last.t, Some((last, tr.meta.retries, drift)), ""));
                        let v = last.potential.values().to_vec();
                        if stage == 0 {
                            twisted = Some(v.clone());
                        }
                        prev = Some(v);
                    }
                    Err(e) => {
                        let t = match &e {
                            CliError::Solver { t, .. } => *t,
                            _ => f64::NAN,
                        };
                        rows.push(sweep_row(k, eps, &name, "failed", t, None, &e.to_string()));
                    }
                }
            }
            rows
        })
        .collect();
    let path = out.join("sweep.csv");
    let mut sink = CsvSink::create(
        &path,
        &["cell", "eps", "stage", "status", "t_reached", "sup_norm", "osc", "min_density", "max_i_drift", "retries", "message"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
    )?;
    let mut failures = 0;
    for row in rows.into_iter().flatten() {
        if row[3] == "failed" {
            failures += 1;
        }
        sink.row(&row)?;
    }
    Ok(failures)
}

fn sweep_row(k: usize, eps: f64, stage: &str, status: &str, t: f64, last: Option<(&State, usize, Option<f64>)>, msg: &str) -> Vec<String> {
    let (sup, osc, min_d, drift, retries) = match last {
        Some((s, r, d)) => (s.sup_norm, s.osc, s.min_density, d.unwrap_or(f64::NAN), r.to_string()),
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN, String::new()),
    };
    let msg = msg.replace([',', '\n'], ";");
    vec![
        k.to_string(),
        output::num(eps),
        stage.to_string(),
        status.to_string(),
        output::num(t),
        output::num(sup),
        output::num(osc),
        output::num(min_d),
        output::num(drift),
        retries,
        msg,
    ]
}
