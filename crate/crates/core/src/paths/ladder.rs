use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::geometry::{holder_quotient, ScalarField};
use crate::ma_core::{Normalization, Potential};
use crate::real::{lit, Real};

use super::PathError;

#[derive(Clone, Copy, Debug)]
pub struct LadderOptions<T> {
    /// Convergence is declared when the last Cauchy gap is below this.
    pub limit_tol: T,
    /// Exponent of the reported Hölder quotient.
    pub holder_gamma: T,
}

impl<T: Real> Default for LadderOptions<T> {
    fn default() -> Self {
        LadderOptions { limit_tol: lit(1e-4), holder_gamma: lit(0.5) }
    }
}

#[derive(Clone, Debug)]
pub struct LadderResult<T: Real> {
    pub eps: Vec<T>,
    /// One sup-normalized potential per rung.
    pub potentials: Vec<Potential<T>>,
    /// sup |u_k - u_{k+1}| between consecutive sup-normalized rungs.
    pub gaps: Vec<T>,
    pub holder: T,
    /// Nodewise extrapolation to eps = 0 in the basis {1, eps^p, eps^p log eps}
    /// through the last three rungs.
    pub limit: Option<ScalarField<T>>,
    pub converged: bool,
}

impl<T: Real> LadderResult<T> {
    pub fn last(&self) -> &Potential<T> {
        self.potentials.last().expect("ladder has at least one rung")
    }
}

/// Solves every rung concurrently with `solve` and measures the convergence in eps.
///
/// `exponent` is the leading power p of the regularization error, the cone
/// angle of the limit.
pub fn epsilon_ladder<T, F>(
    eps_sequence: &[T],
    exponent: T,
    opts: &LadderOptions<T>,
    solve: F,
) -> Result<LadderResult<T>, PathError>
where
    T: Real + Send + Sync,
    F: Fn(T) -> Result<Potential<T>, PathError> + Sync,
{
    if eps_sequence.is_empty() {
        return Err(PathError::InvalidLadder("empty epsilon sequence".into()));
    }
    if eps_sequence.iter().any(|&e| !(e > T::zero() && e <= T::one())) {
        return Err(PathError::InvalidLadder("epsilon outside (0, 1]".into()));
    }
    if eps_sequence.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(PathError::InvalidLadder("epsilon sequence must be strictly decreasing".into()));
    }
    let potentials = eps_sequence
        .par_iter()
        .map(|&eps| {
            solve(eps)
                .map(|p| p.normalized(Normalization::SupZero))
                .map_err(|e| PathError::Cell { eps: eps.as_f64(), source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let gaps: Vec<T> = potentials.windows(2).map(|w| w[0].field().distance(w[1].field())).collect();
    // gaps at roundoff level carry no ordering information
    let floor = lit::<T>(1e3) * T::epsilon() * (T::one() + potentials[0].field().sup_norm());
    let increasing = gaps.windows(2).any(|w| w[1] > w[0] && w[1] > floor);
    if increasing {
        return Err(PathError::NonCauchy { gaps: gaps.iter().map(|g| g.as_f64()).collect() });
    }
    let last = potentials.last().unwrap();
    let holder = holder_quotient(last.field(), opts.holder_gamma);
    let limit = if potentials.len() >= 3 { Some(richardson(eps_sequence, &potentials, exponent)?) } else { None };
    let converged = gaps.last().map_or(true, |&g| g < opts.limit_tol);
    Ok(LadderResult { eps: eps_sequence.to_vec(), potentials, gaps, holder, limit, converged })
}

fn richardson<T: Real>(eps: &[T], pots: &[Potential<T>], p: T) -> Result<ScalarField<T>, PathError> {
    let k = eps.len();
    let p = p.as_f64();
    let basis = |e: f64| [1.0, e.powf(p), e.powf(p) * e.ln()];
    let rows: Vec<[f64; 3]> = eps[k - 3..].iter().map(|e| basis(e.as_f64())).collect();
    let m = Matrix3::from_fn(|r, c| rows[r][c]);
    let lu = m.lu();
    let fields: Vec<&[T]> = pots[k - 3..].iter().map(|q| q.values()).collect();
    let n = fields[0].len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let b = Vector3::new(fields[0][i].as_f64(), fields[1][i].as_f64(), fields[2][i].as_f64());
        let x = lu.solve(&b).ok_or_else(|| PathError::InvalidLadder("degenerate extrapolation basis".into()))?;
        out.push(lit::<T>(x[0]));
    }
    Ok(ScalarField::new(pots[0].field().grid().clone(), out)?)
}
