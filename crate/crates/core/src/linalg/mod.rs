//! Linear solvers for operators of the form 1/2 Delta_flat + diag(d) on a sphere grid.
//!
//! In 1D the s-line operator is tridiagonal and solved directly. In 2D the
//! phi-averaged operator is exactly separable (FFT in phi, one tridiagonal
//! system per Fourier mode) and serves as a right preconditioner for GMRES.

pub mod gmres;
pub mod tridiag;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::geometry::{SphereGrid, SymmetryMode};
use crate::real::{lit, Real};

pub use gmres::{gmres, GmresOptions, GmresOutcome};
pub use tridiag::{Tridiag, TridiagLu};

#[derive(Debug, Clone, thiserror::Error)]
pub enum LinearError {
    #[error("singular pivot in row {row} of Fourier mode {mode}")]
    Singular { mode: usize, row: usize },
    #[error("GMRES stagnated after {iterations} iterations at relative residual {residual:e}")]
    Stagnation { iterations: usize, residual: f64 },
}

/// 1/2 d^2/ds^2 (Neumann ghost closure) + diag(d) - shift, on the full s-line.
pub fn line_operator<T: Real>(grid: &SphereGrid<T>, d_rows: &[T], shift: T) -> Tridiag<T> {
    let n = grid.ns();
    let c = lit::<T>(0.5) / (grid.hs() * grid.hs());
    let two = lit::<T>(2.0);
    let mut sub = vec![c; n - 1];
    let mut sup = vec![c; n - 1];
    sub[n - 2] = two * c;
    sup[0] = two * c;
    let diag = (0..n).map(|i| -two * c + d_rows[i] - shift).collect();
    Tridiag { sub, diag, sup }
}

/// Direct solver for one s-line system, optionally restricted to even fields
/// and optionally grounded (first equation replaced by x_0 = 0) for the
/// singular Neumann-Poisson case.
#[derive(Clone, Debug)]
pub struct LineSolver<T: Real> {
    lu: TridiagLu<T>,
    n: usize,
    fold: bool,
    ground: bool,
}

impl<T: Real> LineSolver<T> {
    pub fn new(op: &Tridiag<T>, fold: bool, ground: bool) -> Result<Self, usize> {
        let n = op.diag.len();
        let mut a = if fold { op.fold_even() } else { op.clone() };
        if ground {
            a.diag[0] = T::one();
            a.sup[0] = T::zero();
        }
        let lu = TridiagLu::factor(&a.sub, &a.diag, &a.sup).map_err(|e| e.row)?;
        Ok(LineSolver { lu, n, fold, ground })
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let m = if self.fold { self.n.div_ceil(2) } else { self.n };
        let mut b = rhs[..m].to_vec();
        if self.ground {
            b[0] = T::zero();
        }
        self.lu.solve_in_place(&mut b);
        if !self.fold {
            return b;
        }
        (0..self.n).map(|j| b[j.min(self.n - 1 - j)]).collect()
    }
}

/// Exact solver for 1/2 Delta_flat + diag(d(s)) with d depending on s only.
pub struct Separable<T: Real> {
    grid: Arc<SphereGrid<T>>,
    lines: Vec<LineSolver<T>>,
    forward: Option<Arc<dyn Fft<T>>>,
    inverse: Option<Arc<dyn Fft<T>>>,
}

impl<T: Real> Separable<T> {
    /// `d_rows` has one entry per s row. `ground_mean` singles out the
    /// constant nullspace of the pure Poisson operator.
    pub fn new(grid: &Arc<SphereGrid<T>>, d_rows: &[T], ground_mean: bool) -> Result<Self, LinearError> {
        let np = grid.nphi();
        let fold = np == 1 && grid.mode() == SymmetryMode::S1Z2Invariant;
        let two = lit::<T>(2.0);
        let ihp2 = T::one() / (grid.hphi() * grid.hphi());
        let mut lines = Vec::with_capacity(np / 2 + 1);
        for m in 0..=np / 2 {
            let kappa = if np > 1 {
                let th = (T::PI() + T::PI()) * T::from_usize(m).unwrap() / T::from_usize(np).unwrap();
                (two - two * th.cos()) * ihp2
            } else {
                T::zero()
            };
            let op = line_operator(grid, d_rows, kappa / two);
            let solver = LineSolver::new(&op, fold, ground_mean && m == 0)
                .map_err(|row| LinearError::Singular { mode: m, row })?;
            lines.push(solver);
        }
        let (forward, inverse) = if np > 1 {
            let mut planner = FftPlanner::new();
            (Some(planner.plan_fft_forward(np)), Some(planner.plan_fft_inverse(np)))
        } else {
            (None, None)
        };
        Ok(Separable { grid: grid.clone(), lines, forward, inverse })
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let (ns, np) = (self.grid.ns(), self.grid.nphi());
        if np == 1 {
            return self.lines[0].solve(rhs);
        }
        let (fwd, inv) = (self.forward.as_ref().unwrap(), self.inverse.as_ref().unwrap());
        let mut buf: Vec<Complex<T>> = rhs.iter().map(|&r| Complex::new(r, T::zero())).collect();
        for row in buf.chunks_mut(np) {
            fwd.process(row);
        }
        let mut re = vec![T::zero(); ns];
        let mut im = vec![T::zero(); ns];
        for k in 0..np {
            let m = k.min(np - k);
            for i in 0..ns {
                let c = buf[i * np + k];
                re[i] = c.re;
                im[i] = c.im;
            }
            let xr = self.lines[m].solve(&re);
            let xi = self.lines[m].solve(&im);
            for i in 0..ns {
                buf[i * np + k] = Complex::new(xr[i], xi[i]);
            }
        }
        for row in buf.chunks_mut(np) {
            inv.process(row);
        }
        let scale = T::one() / T::from_usize(np).unwrap();
        buf.iter().map(|c| c.re * scale).collect()
    }
}

fn plain_mean<T: Real>(grid: &SphereGrid<T>, v: &[T]) -> T {
    let ones = vec![T::one(); v.len()];
    grid.chart_sum(v) / grid.chart_sum(&ones)
}

/// Solves 1/2 Delta_N x = rhs - mean(rhs) and returns the chart-mean-zero solution.
///
/// The projection makes the Neumann problem solvable; callers that need the
/// unprojected equation should check the compatibility themselves.
pub fn poisson_solve<T: Real>(grid: &Arc<SphereGrid<T>>, rhs: &[T]) -> Result<Vec<T>, LinearError> {
    poisson_solve_with(grid, rhs, grid.mode() == SymmetryMode::S1Z2Invariant)
}

/// As [`poisson_solve`], with explicit control over the even-field restriction.
pub fn poisson_solve_with<T: Real>(
    grid: &Arc<SphereGrid<T>>,
    rhs: &[T],
    fold: bool,
) -> Result<Vec<T>, LinearError> {
    let mean = plain_mean(grid, rhs);
    let r: Vec<T> = rhs.iter().map(|&x| x - mean).collect();
    let x = if grid.nphi() == 1 {
        let op = line_operator(grid, &vec![T::zero(); grid.ns()], T::zero());
        LineSolver::new(&op, fold, true)
            .map_err(|row| LinearError::Singular { mode: 0, row })?
            .solve(&r)
    } else {
        Separable::new(grid, &vec![T::zero(); grid.ns()], true)?.solve(&r)
    };
    let xm = plain_mean(grid, &x);
    Ok(x.into_iter().map(|v| v - xm).collect())
}

/// y = 1/2 Delta_N x + d x.
pub fn apply_helmholtz<T: Real>(grid: &SphereGrid<T>, d: &[T], x: &[T]) -> Vec<T> {
    let half = lit::<T>(0.5);
    grid.laplacian(x).into_iter().zip(d.iter().zip(x)).map(|(l, (&di, &xi))| half * l + di * xi).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct HelmholtzReport<T> {
    pub iterations: usize,
    pub relative_residual: T,
}

/// Solves (1/2 Delta_N + diag(d)) x = rhs.
pub fn solve_helmholtz<T: Real>(
    grid: &Arc<SphereGrid<T>>,
    d: &[T],
    rhs: &[T],
    rtol: T,
) -> Result<(Vec<T>, HelmholtzReport<T>), LinearError> {
    let (ns, np) = (grid.ns(), grid.nphi());
    if np == 1 {
        let fold = grid.mode() == SymmetryMode::S1Z2Invariant;
        let op = line_operator(grid, d, T::zero());
        let x = LineSolver::new(&op, fold, false)
            .map_err(|row| LinearError::Singular { mode: 0, row })?
            .solve(rhs);
        return Ok((x, HelmholtzReport { iterations: 1, relative_residual: T::zero() }));
    }
    let dbar: Vec<T> = (0..ns)
        .map(|i| d[i * np..(i + 1) * np].iter().copied().sum::<T>() / T::from_usize(np).unwrap())
        .collect();
    let pre = Separable::new(grid, &dbar, false)?;
    let mut x = vec![T::zero(); rhs.len()];
    let out = gmres(
        |v: &[T]| apply_helmholtz(grid, d, v),
        |v: &[T]| pre.solve(v),
        rhs,
        &mut x,
        GmresOptions { rtol, restart: 60, max_iter: 600 },
    );
    if !out.converged {
        return Err(LinearError::Stagnation { iterations: out.iterations, residual: out.relative_residual.as_f64() });
    }
    Ok((x, HelmholtzReport { iterations: out.iterations, relative_residual: out.relative_residual }))
}
