use crate::geometry::{potential_density, ScalarField};
use crate::linalg::{self, LinearError};
use crate::real::{lit, sup_abs, Real};

use super::{linearization_diagonal, ma_residual, Gauge, MAProblem, MaError, NewtonOptions, Normalization, Potential, Solution};

/// Damped Newton iteration for [`MAProblem`].
///
/// At t = 0 the equation is linear in (phi, c): c is fixed by the discrete
/// mass identity and phi by one Neumann-Poisson solve with chart mean zero.
/// For t > 0 each step solves (1/2 Delta + t F) delta = -R and backtracks
/// until the trial iterate keeps rho_phi >= floor * rho0 and the sup
/// residual decreases.
pub fn newton_solve<T: Real>(
    problem: &MAProblem<T>,
    init: &ScalarField<T>,
    opts: &NewtonOptions<T>,
) -> Result<Solution<T>, MaError> {
    if !(opts.tol_residual > T::zero()) {
        return Err(MaError::InvalidProblem("tolerance must be positive".into()));
    }
    if let Some(index) = potential_density(init).values().iter().position(|&r| !(r > T::zero())) {
        return Err(MaError::NotKahler { index });
    }
    match problem.gauge() {
        Gauge::FreeConstant if problem.t() == T::zero() => solve_linear(problem, opts),
        Gauge::FreeConstant => Err(MaError::InvalidProblem(
            "the free-constant gauge is only determined at t = 0".into(),
        )),
        Gauge::None => solve_nonlinear(problem, init, opts),
    }
}

fn solve_linear<T: Real>(problem: &MAProblem<T>, opts: &NewtonOptions<T>) -> Result<Solution<T>, MaError> {
    let grid = problem.grid();
    let n = grid.len();
    let rho0: Vec<T> = (0..n).map(|i| grid.rho0_at(i)).collect();
    let f = problem.rhs_density(&vec![T::zero(); n]);
    let c = (grid.chart_sum(&rho0) / grid.chart_sum(&f)).ln();
    let scale = c.exp();
    let rhs: Vec<T> = (0..n).map(|i| f[i] * scale - rho0[i]).collect();
    let phi = linalg::poisson_solve(grid, &rhs).map_err(MaError::SingularLinearization)?;
    let phi = ScalarField::from_vec(grid.clone(), phi);
    let shifted = MAProblem::new(T::zero(), problem.g().add_scalar(c), Gauge::FreeConstant)?;
    let residual = ma_residual(&shifted, &phi).sup_norm();
    if !(residual <= opts.tol_residual) {
        return Err(MaError::MaxIterExceeded { iterations: 1, residual: residual.as_f64() });
    }
    Ok(Solution {
        potential: Potential::from_field(phi, Normalization::MeanZero),
        constant: c,
        iterations: 1,
        residual,
        linear_iterations: 1,
    })
}

fn solve_nonlinear<T: Real>(
    problem: &MAProblem<T>,
    init: &ScalarField<T>,
    opts: &NewtonOptions<T>,
) -> Result<Solution<T>, MaError> {
    let grid = problem.grid();
    let n = grid.len();
    let mut phi = init.clone();
    let mut res = ma_residual(problem, &phi);
    let mut r = res.sup_norm();
    let mut linear_iterations = 0;
    let sufficient = lit::<T>(1e-4);

    for iter in 0..=opts.max_iter {
        if r <= opts.tol_residual {
            return Ok(Solution {
                potential: Potential::from_field(phi, Normalization::Raw),
                constant: T::zero(),
                iterations: iter,
                residual: r,
                linear_iterations,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let d = linearization_diagonal(problem, &phi);
        let rhs: Vec<T> = res.values().iter().map(|&v| -v).collect();
        // inexact Newton forcing term
        let rtol = r.min(lit(1e-2)).max(lit(1e-13));
        let (delta, report) = linalg::solve_helmholtz(grid, &d, &rhs, rtol).map_err(MaError::SingularLinearization)?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(MaError::SingularLinearization(LinearError::Singular { mode: 0, row: 0 }));
        }
        linear_iterations += report.iterations;

        let mut lambda = T::one();
        let mut accepted = None;
        let mut positive_seen = false;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<T> = (0..n).map(|i| phi.values()[i] + lambda * delta[i]).collect();
            let trial = ScalarField::from_vec(grid.clone(), trial);
            let rho = potential_density(&trial);
            let positive = (0..n).all(|i| rho.values()[i] >= opts.positivity_floor * grid.rho0_at(i));
            if positive {
                positive_seen = true;
                let tres = ma_residual(problem, &trial);
                let tr = tres.sup_norm();
                if tr.is_finite() && (tr <= (T::one() - sufficient * lambda) * r || tr <= opts.tol_residual) {
                    accepted = Some((trial, tres, tr));
                    break;
                }
            }
            lambda = lambda * opts.backtrack;
        }
        match accepted {
            Some((p, rv, rr)) => {
                log::trace!("newton iter {iter}: residual {r:e} -> {rr:e}, step {lambda}");
                phi = p;
                res = rv;
                r = rr;
            }
            None if !positive_seen => return Err(MaError::KahlerConeViolation { iteration: iter }),
            None => {
                return Err(MaError::MaxIterExceeded { iterations: iter + 1, residual: r.as_f64() });
            }
        }
    }
    Err(MaError::MaxIterExceeded { iterations: opts.max_iter, residual: sup_abs(res.values()).as_f64() })
}
