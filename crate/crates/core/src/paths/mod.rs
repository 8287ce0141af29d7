//! Continuity paths in t.
//!
//! The twisted path solves, for t from 0 to mu,
//!
//! ```text
//! omega_phi = exp(-t phi - (mu - t) phi_eps + h - sum_i (1 - beta_i) log(|S_i|^2 + eps) + c_norm) omega0,
//! ```
//!
//! starting from the reference potential psi. An angle leg then moves one
//! cone angle: with t = mu(b_t) it solves
//! omega_u = exp(-t u + h - sum_i (1 - beta_i(t)) log(|S_i|^2 + eps)) omega0.
//! For the two-pole divisor (one component, lambda = 1) this is the path in
//! the cone angle itself.

mod ladder;

use std::ops::ControlFlow;
use std::sync::Arc;

use crate::energy::{functional_report, EnergyError, FunctionalReport};
use crate::geometry::{integrate, oscillation, potential_density, GeometryError, ScalarField, SphereGrid};
use crate::ma_core::{
    newton_solve, solve_reference, smooth_volume_family, Background, Gauge, MAProblem, MaError, NewtonOptions,
    Normalization, Potential, Reference, VolumeProfile,
};
use crate::real::{lit, Real};

pub use ladder::{epsilon_ladder, LadderOptions, LadderResult};

#[derive(Debug, Clone, thiserror::Error)]
pub enum PathError {
    #[error("step size fell below the minimum after t = {last_t} (attempted t = {attempted_t}): {source}")]
    StepCollapse { last_t: f64, attempted_t: f64, source: MaError },
    #[error("leg {index}: {source}")]
    Leg { index: usize, source: Box<PathError> },
    #[error("epsilon = {eps:e}: {source}")]
    Cell { eps: f64, source: Box<PathError> },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("reference index {index} out of range for a trace of {len} states")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("epsilon ladder is not Cauchy: gaps {gaps:?}")]
    NonCauchy { gaps: Vec<f64> },
    #[error("invalid epsilon ladder: {0}")]
    InvalidLadder(String),
    #[error(transparent)]
    Solver(#[from] MaError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSchedule<T> {
    pub t_start: T,
    pub t_end: T,
    pub dt: T,
    pub min_dt: T,
    /// Step reduction after a failed solve.
    pub retry_factor: T,
}

impl<T: Real> PathSchedule<T> {
    pub fn new(t_start: T, t_end: T) -> Self {
        PathSchedule { t_start, t_end, dt: lit(0.02), min_dt: lit(1e-4), retry_factor: lit(0.5) }
    }

    pub fn with_steps(mut self, dt: T, min_dt: T) -> Self {
        self.dt = dt;
        self.min_dt = min_dt;
        self
    }

    pub fn validate(&self) -> Result<(), PathError> {
        let finite = [self.t_start, self.t_end, self.dt, self.min_dt, self.retry_factor].iter().all(|v| v.is_finite());
        if !finite {
            return Err(PathError::InvalidSchedule("non-finite parameter".into()));
        }
        if !(self.min_dt > T::zero() && self.min_dt <= self.dt) {
            return Err(PathError::InvalidSchedule(format!("need 0 < min_dt <= dt, got {} and {}", self.min_dt, self.dt)));
        }
        if !(self.retry_factor > T::zero() && self.retry_factor < T::one()) {
            return Err(PathError::InvalidSchedule("retry factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    /// The twisted path from psi to the volume-smoothed target at t = mu.
    StarBeta,
    /// Angle leg moving component `component`.
    Angle { component: usize },
}

impl PathKind {
    pub fn name(&self) -> String {
        match self {
            PathKind::StarBeta => "star_beta".into(),
            PathKind::Angle { component } => format!("angle{component}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathOptions<T> {
    pub newton: NewtonOptions<T>,
    /// Audited class weights mu' of the modified functional; for a single
    /// component these are the audited angles beta'.
    pub mu_primes: Vec<T>,
    /// Estimate the first eigenvalue of every recorded state.
    pub lambda1: bool,
}

impl<T: Real> Default for PathOptions<T> {
    fn default() -> Self {
        PathOptions { newton: NewtonOptions::default(), mu_primes: Vec::new(), lambda1: false }
    }
}

/// Everything fixed at one epsilon: the background, the smoothed volume
/// potential phi_eps and the reference potential psi.
#[derive(Clone, Debug)]
pub struct PathContext<T: Real> {
    pub bg: Arc<Background<T>>,
    pub eps: T,
    pub phi_eps: Potential<T>,
    pub reference: Reference<T>,
}

impl<T: Real> PathContext<T> {
    pub fn prepare(
        bg: Arc<Background<T>>,
        eps: T,
        seed: &VolumeProfile<T>,
        opts: &NewtonOptions<T>,
    ) -> Result<Self, PathError> {
        let family = smooth_volume_family(&bg, seed, eps, opts)?;
        let reference = solve_reference(&bg, eps, &family.phi_eps, opts)?;
        Ok(PathContext { bg, eps, phi_eps: family.phi_eps, reference })
    }

    pub fn grid(&self) -> &Arc<SphereGrid<T>> {
        self.bg.grid()
    }

    /// Angles of the configured divisor.
    pub fn angles(&self) -> Vec<T> {
        self.bg.divisor().angles()
    }

    pub fn mu(&self) -> T {
        self.bg.mu(&self.angles())
    }
}

/// One solved point of a path.
#[derive(Clone, Debug)]
pub struct PathState<T: Real> {
    pub kind: PathKind,
    pub eps: T,
    pub t: T,
    /// Cone angles at this point.
    pub angles: Vec<T>,
    pub potential: Potential<T>,
    /// The G of the solved equation omega = exp(-t phi + G) omega0.
    pub g: ScalarField<T>,
    /// Functionals; entries of `e_modified` are NaN where mu' exceeds the current mu.
    pub report: FunctionalReport<T>,
    pub osc: T,
    pub sup_norm: T,
    /// min over nodes of rho_phi / rho0.
    pub min_density: T,
    pub lambda1: Option<T>,
    pub newton_iterations: usize,
    pub residual: T,
    /// Step size to try next; kept so that an interrupted run resumes identically.
    pub next_dt: T,
}

#[derive(Clone, Debug)]
pub struct TraceMeta<T> {
    pub kind: PathKind,
    pub eps: T,
    pub t_start: T,
    pub t_end: T,
    /// False when the observer stopped the run early.
    pub completed: bool,
    pub retries: usize,
    /// Set when the run continued from a stored state, whose row is not repeated.
    pub resumed_from: Option<T>,
}

#[derive(Clone, Debug)]
pub struct Trace<T: Real> {
    pub states: Vec<PathState<T>>,
    pub meta: TraceMeta<T>,
}

impl<T: Real> Trace<T> {
    pub fn last(&self) -> Option<&PathState<T>> {
        self.states.last()
    }
}

/// Called with every recorded state; `Break` stops the run after that state.
pub type Observer<'a, T> = dyn FnMut(&PathState<T>) -> ControlFlow<()> + 'a;

#[derive(Clone, Debug)]
enum Equation<T: Real> {
    /// G = -(mu - t) phi_eps + base.
    Twisted { mu: T, phi_eps: Vec<T>, base: Vec<T> },
    /// G = rest - (1 - beta_j(t)) L_j with beta_j(t) = beta0 + (t - t0) / lambda.
    Angle { angles0: Vec<T>, component: usize, t0: T, lambda: T, rest: Vec<T>, lj: Vec<T> },
}

/// A path with its equation fixed; `run` can start fresh or from a stored state.
#[derive(Clone, Debug)]
pub struct PathSpec<T: Real> {
    kind: PathKind,
    ctx: Arc<PathContext<T>>,
    eq: Equation<T>,
    t_start: T,
    t_end: T,
    start: Potential<T>,
}

impl<T: Real> PathSpec<T> {
    /// The twisted path from t = 0 to t = mu.
    pub fn star_beta(ctx: Arc<PathContext<T>>) -> Result<Self, PathError> {
        let angles = ctx.angles();
        let mu = ctx.bg.mu(&angles);
        let div = ctx.bg.divisor_term(ctx.eps, &angles)?;
        let c = ctx.reference.c_norm;
        let base = (0..ctx.grid().len()).map(|i| ctx.bg.h().values()[i] - div[i] + c).collect();
        // the t -> 0 limit of the path fixes the constant: int (phi_eps - phi_0) omega_psi = 0
        let psi = ctx.reference.psi.field();
        let rho_psi = ctx.reference.psi.density();
        let diff = ctx.phi_eps.field().zip_map(psi, |a, b| a - b);
        let shift = integrate(&diff, &rho_psi) / rho_psi.total_mass();
        let start = Potential::new(psi.add_scalar(shift), Normalization::Raw)?;
        Ok(PathSpec {
            kind: PathKind::StarBeta,
            eq: Equation::Twisted { mu, phi_eps: ctx.phi_eps.values().to_vec(), base },
            t_start: T::zero(),
            t_end: mu,
            start,
            ctx,
        })
    }

    /// A leg moving the angle of `component` from `angles[component]` to `target`,
    /// starting at a potential that solves the angle equation at t = mu(angles).
    pub fn angle_leg(
        ctx: Arc<PathContext<T>>,
        angles: &[T],
        component: usize,
        target: T,
        start: Potential<T>,
    ) -> Result<Self, PathError> {
        let n = ctx.bg.n_components();
        if angles.len() != n || component >= n {
            return Err(PathError::InvalidTarget(format!("component {component} of {n}, {} angles", angles.len())));
        }
        if !(target > T::zero() && target <= T::one()) {
            return Err(PathError::InvalidTarget(format!("angle {target} outside (0, 1]")));
        }
        let mut end = angles.to_vec();
        end[component] = target;
        let t0 = ctx.bg.mu(angles);
        let t1 = ctx.bg.mu(&end);
        if !(t1 > T::zero()) {
            return Err(PathError::InvalidTarget(format!("mu = {t1} at the target angles")));
        }
        let mut others = angles.to_vec();
        others[component] = T::one();
        let div = ctx.bg.divisor_term(ctx.eps, &others)?;
        let rest = (0..ctx.grid().len()).map(|i| ctx.bg.h().values()[i] - div[i]).collect();
        let lj = ctx.bg.log_norm_eps(component, ctx.eps)?;
        Ok(PathSpec {
            kind: PathKind::Angle { component },
            eq: Equation::Angle { angles0: angles.to_vec(), component, t0, lambda: ctx.bg.lambda(component), rest, lj },
            t_start: t0,
            t_end: t1,
            start,
            ctx,
        })
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn t_range(&self) -> (T, T) {
        (self.t_start, self.t_end)
    }

    pub fn context(&self) -> &Arc<PathContext<T>> {
        &self.ctx
    }

    pub fn angles_at(&self, t: T) -> Vec<T> {
        match &self.eq {
            Equation::Twisted { .. } => self.ctx.angles(),
            Equation::Angle { angles0, component, t0, lambda, .. } => {
                let mut a = angles0.clone();
                a[*component] = a[*component] + (t - *t0) / *lambda;
                a
            }
        }
    }

    pub fn g_at(&self, t: T) -> ScalarField<T> {
        let vals = match &self.eq {
            Equation::Twisted { mu, phi_eps, base } => {
                let w = *mu - t;
                phi_eps.iter().zip(base).map(|(&p, &b)| b - w * p).collect()
            }
            Equation::Angle { component, rest, lj, .. } => {
                let w = T::one() - self.angles_at(t)[*component];
                rest.iter().zip(lj).map(|(&r, &l)| r - w * l).collect()
            }
        };
        ScalarField::new(self.ctx.grid().clone(), vals).expect("G has grid length")
    }

    /// The equation at t > 0.
    pub fn problem_at(&self, t: T) -> Result<MAProblem<T>, PathError> {
        Ok(MAProblem::new(t, self.g_at(t), Gauge::None)?)
    }

    pub fn start_potential(&self) -> &Potential<T> {
        &self.start
    }

    /// Records a solved point; exposed for audits of stored states.
    pub fn state(
        &self,
        t: T,
        potential: Potential<T>,
        opts: &PathOptions<T>,
        newton_iterations: usize,
        next_dt: T,
    ) -> Result<PathState<T>, PathError> {
        let g = self.g_at(t);
        let angles = self.angles_at(t);
        let field = potential.field();
        let rho = potential_density(field);
        let rhs: Vec<T> = (0..field.len())
            .map(|i| (g.values()[i] - t * field.values()[i]).exp() * self.ctx.grid().rho0_at(i))
            .collect();
        let residual = rho.values().iter().zip(&rhs).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        let report = report_with_gaps(field, &self.ctx, &angles, &opts.mu_primes)?;
        let lambda1 = if opts.lambda1 {
            Some(lit::<T>(crate::audit::first_eigenvalue(&rho).map_err(|e| PathError::InvalidTarget(e.to_string()))?.value))
        } else {
            None
        };
        Ok(PathState {
            kind: self.kind,
            eps: self.ctx.eps,
            t,
            angles,
            osc: oscillation(field),
            sup_norm: field.sup_norm(),
            min_density: rho.min_ratio_to_reference(),
            lambda1,
            newton_iterations,
            residual,
            next_dt,
            g,
            report,
            potential,
        })
    }

    /// Runs the whole path from its start potential.
    pub fn run(&self, schedule: &PathSchedule<T>, opts: &PathOptions<T>, observer: &mut Observer<'_, T>) -> Result<Trace<T>, PathError> {
        self.check_schedule(schedule)?;
        let first = self.state(self.t_start, self.start.clone(), opts, 0, schedule.dt)?;
        let mut trace = self.empty_trace(None);
        let stop = observer(&first).is_break();
        trace.states.push(first);
        if stop || self.t_start == self.t_end {
            trace.meta.completed = !stop;
            return Ok(trace);
        }
        let (t, phi, dt) = {
            let s = &trace.states[0];
            (s.t, s.potential.field().clone(), s.next_dt)
        };
        self.continue_from(trace, t, phi, dt, schedule, opts, observer)
    }

    /// Continues from a stored point (t, potential, next step); that point is not re-recorded.
    pub fn resume(
        &self,
        t: T,
        potential: &ScalarField<T>,
        next_dt: T,
        schedule: &PathSchedule<T>,
        opts: &PathOptions<T>,
        observer: &mut Observer<'_, T>,
    ) -> Result<Trace<T>, PathError> {
        self.check_schedule(schedule)?;
        let lo = self.t_start.min(self.t_end);
        let hi = self.t_start.max(self.t_end);
        if !(t >= lo && t <= hi) {
            return Err(PathError::InvalidSchedule(format!("resume point t = {t} outside the path")));
        }
        let trace = self.empty_trace(Some(t));
        self.continue_from(trace, t, potential.clone(), next_dt, schedule, opts, observer)
    }

    fn check_schedule(&self, schedule: &PathSchedule<T>) -> Result<(), PathError> {
        schedule.validate()?;
        let tol = lit::<T>(1e-12);
        if (schedule.t_start - self.t_start).abs() > tol || (schedule.t_end - self.t_end).abs() > tol {
            return Err(PathError::InvalidSchedule(format!(
                "schedule [{}, {}] does not match the path range [{}, {}]",
                schedule.t_start, schedule.t_end, self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    fn empty_trace(&self, resumed_from: Option<T>) -> Trace<T> {
        Trace {
            states: Vec::new(),
            meta: TraceMeta {
                kind: self.kind,
                eps: self.ctx.eps,
                t_start: self.t_start,
                t_end: self.t_end,
                completed: false,
                retries: 0,
                resumed_from,
            },
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn continue_from(
        &self,
        mut trace: Trace<T>,
        mut t: T,
        mut phi: ScalarField<T>,
        mut dt: T,
        schedule: &PathSchedule<T>,
        opts: &PathOptions<T>,
        observer: &mut Observer<'_, T>,
    ) -> Result<Trace<T>, PathError> {
        let dir = if self.t_end >= self.t_start { T::one() } else { -T::one() };
        while t != self.t_end {
            let remaining = (self.t_end - t).abs();
            let t_try = if remaining <= dt * lit(1.000001) { self.t_end } else { t + dir * dt };
            let attempt = self.problem_at(t_try).map_err(|e| match e {
                PathError::Solver(m) => m,
                other => MaError::InvalidProblem(other.to_string()),
            });
            match attempt.and_then(|p| newton_solve(&p, &phi, &opts.newton)) {
                Ok(sol) => {
                    let grow = (dt / schedule.retry_factor).min(schedule.dt);
                    let state = self.state(t_try, sol.potential, opts, sol.iterations, grow)?;
                    log::debug!(
                        "{} eps={:e} t={:.6}: {} newton iterations, residual {:e}",
                        self.kind.name(),
                        self.ctx.eps,
                        t_try,
                        sol.iterations,
                        state.residual
                    );
                    t = t_try;
                    dt = grow;
                    phi = state.potential.field().clone();
                    let stop = observer(&state).is_break();
                    trace.states.push(state);
                    if stop {
                        return Ok(trace);
                    }
                }
                Err(err) => {
                    trace.meta.retries += 1;
                    dt = dt * schedule.retry_factor;
                    log::debug!("{} t={t_try}: {err}; step reduced to {dt}", self.kind.name());
                    if dt < schedule.min_dt {
                        return Err(PathError::StepCollapse {
                            last_t: t.as_f64(),
                            attempted_t: t_try.as_f64(),
                            source: err,
                        });
                    }
                }
            }
        }
        trace.meta.completed = true;
        Ok(trace)
    }
}

/// The report at `angles`, with NaN for the audited mu' above the current mu.
fn report_with_gaps<T: Real>(
    phi: &ScalarField<T>,
    ctx: &PathContext<T>,
    angles: &[T],
    mu_primes: &[T],
) -> Result<FunctionalReport<T>, PathError> {
    let mu = ctx.bg.mu(angles);
    let valid: Vec<T> = mu_primes.iter().copied().filter(|&m| m <= mu).collect();
    let mut r = functional_report(phi, &ctx.bg, angles, ctx.eps, ctx.phi_eps.field(), &valid)?;
    let (mut mods, mut cs) = (r.e_modified.iter(), r.coercivity_c.iter());
    let mut e_modified = Vec::with_capacity(mu_primes.len());
    let mut coercivity_c = Vec::with_capacity(mu_primes.len());
    for &m in mu_primes {
        if m <= mu {
            e_modified.push(*mods.next().expect("one value per valid mu'"));
            coercivity_c.push(*cs.next().expect("one value per valid mu'"));
        } else {
            e_modified.push(T::nan());
            coercivity_c.push(T::nan());
        }
    }
    r.mu_primes = mu_primes.to_vec();
    r.e_modified = e_modified;
    r.coercivity_c = coercivity_c;
    Ok(r)
}

fn keep_going<T: Real>(_: &PathState<T>) -> ControlFlow<()> {
    ControlFlow::Continue(())
}

/// The twisted path from psi at t = 0 to the smoothed twisted KE metric at t = mu.
pub fn run_star_beta<T: Real>(
    ctx: Arc<PathContext<T>>,
    schedule: &PathSchedule<T>,
    opts: &PathOptions<T>,
) -> Result<Trace<T>, PathError> {
    PathSpec::star_beta(ctx)?.run(schedule, opts, &mut keep_going)
}

/// Start of the angle path from the terminal twisted state: u = phi - c_norm / mu.
pub fn angle_start<T: Real>(ctx: &PathContext<T>, terminal: &PathState<T>) -> Result<Potential<T>, PathError> {
    if terminal.kind != PathKind::StarBeta {
        return Ok(terminal.potential.clone());
    }
    let mu = ctx.mu();
    if (terminal.t - mu).abs() > lit(1e-12) {
        return Err(PathError::InvalidTarget(format!("twisted state at t = {} has not reached mu = {mu}", terminal.t)));
    }
    let shift = -ctx.reference.c_norm / mu;
    Ok(Potential::new(terminal.potential.field().add_scalar(shift), Normalization::Raw)?)
}

/// Moves the single cone angle from `beta_start` to `beta_target` starting at the terminal twisted state.
pub fn run_star<T: Real>(
    ctx: Arc<PathContext<T>>,
    terminal: &PathState<T>,
    beta_target: T,
    dt: T,
    min_dt: T,
    opts: &PathOptions<T>,
) -> Result<Trace<T>, PathError> {
    if ctx.bg.n_components() != 1 {
        return Err(PathError::InvalidTarget("run_star moves a single component; use deform_snc".into()));
    }
    let start = angle_start(&ctx, terminal)?;
    let spec = PathSpec::angle_leg(ctx, &terminal.angles, 0, beta_target, start)?;
    let (a, b) = spec.t_range();
    spec.run(&PathSchedule::new(a, b).with_steps(dt, min_dt), opts, &mut keep_going)
}

/// Successive angle legs, one component at a time, from the terminal twisted state to `target`.
pub fn deform_snc<T: Real>(
    ctx: Arc<PathContext<T>>,
    terminal: &PathState<T>,
    target: &[T],
    dt: T,
    min_dt: T,
    opts: &PathOptions<T>,
    observer: &mut Observer<'_, T>,
) -> Result<Vec<Trace<T>>, PathError> {
    let n = ctx.bg.n_components();
    if target.len() != n {
        return Err(PathError::InvalidTarget(format!("{} target angles for {n} components", target.len())));
    }
    if let Some(b) = target.iter().find(|&&b| !(b > T::zero() && b <= T::one())) {
        return Err(PathError::InvalidTarget(format!("angle {b} outside (0, 1]")));
    }
    let mu_target = ctx.bg.mu(target);
    if !(mu_target > T::zero()) {
        return Err(PathError::InvalidTarget(format!("mu = {mu_target} at the target angles")));
    }
    let mut angles = terminal.angles.clone();
    let mut start = angle_start(&ctx, terminal)?;
    let mut traces = Vec::with_capacity(n);
    for j in 0..n {
        let leg = |e: PathError| PathError::Leg { index: j, source: Box::new(e) };
        let spec = PathSpec::angle_leg(ctx.clone(), &angles, j, target[j], start.clone()).map_err(leg)?;
        let (a, b) = spec.t_range();
        let trace = spec.run(&PathSchedule::new(a, b).with_steps(dt, min_dt), opts, observer).map_err(leg)?;
        let last = trace.last().expect("a run records its start");
        if !trace.meta.completed {
            traces.push(trace);
            return Ok(traces);
        }
        angles = last.angles.clone();
        angles[j] = target[j];
        start = last.potential.clone();
        traces.push(trace);
    }
    Ok(traces)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport<T> {
    pub reference_index: usize,
    pub reference_i: T,
    /// max over states of I(state) - I(reference).
    pub max_drift: T,
    pub max_at_t: T,
    /// Whether the drift reached the unit threshold.
    pub crossed: bool,
}

pub fn i_drift_monitor<T: Real>(trace: &Trace<T>, reference_index: usize) -> Result<DriftReport<T>, PathError> {
    let len = trace.states.len();
    let reference = trace.states.get(reference_index).ok_or(PathError::IndexOutOfRange { index: reference_index, len })?;
    let base = reference.report.i;
    let mut max_drift = T::zero();
    let mut max_at_t = reference.t;
    for s in &trace.states {
        let d = s.report.i - base;
        if d > max_drift {
            max_drift = d;
            max_at_t = s.t;
        }
    }
    Ok(DriftReport { reference_index, reference_i: base, max_drift, max_at_t, crossed: max_drift >= T::one() })
}

/// The weak conical KE potential of the two-pole divisor,
/// (2 / beta) log cosh(beta s) - 2 log cosh s.
pub fn football_potential<T: Real>(grid: &Arc<SphereGrid<T>>, beta: T) -> ScalarField<T> {
    let two = lit::<T>(2.0);
    ScalarField::from_fn(grid.clone(), |s, _| two / beta * log_cosh(beta * s) - two * log_cosh(s))
}

fn log_cosh<T: Real>(x: T) -> T {
    let a = x.abs();
    a + (-(a + a)).exp().ln_1p() - T::LN_2()
}
