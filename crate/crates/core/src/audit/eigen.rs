use nalgebra::{DMatrix, SymmetricEigen};

use crate::geometry::MetricDensity;
use crate::linalg::{line_operator, poisson_solve_with, LineSolver, LinearError};
use crate::real::{lit, Real};

use super::AuditError;

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    /// Relative change of the Ritz value that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { tol: 1e-11, max_iter: 300 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenEstimate {
    pub value: f64,
    pub iterations: usize,
    /// Fourier sector in phi of the eigenfunction on a rotation-invariant grid; 0 in 2D.
    pub sector: usize,
}

pub fn first_eigenvalue<T: Real>(rho: &MetricDensity<T>) -> Result<EigenEstimate, AuditError> {
    first_eigenvalue_with(rho, &EigenOptions::default())
}

/// Smallest nonzero eigenvalue of Delta_phi f = (1/2 Delta_flat f) / rho, i.e. of
/// -1/2 D2 f = lambda rho f, by block inverse iteration with Rayleigh-Ritz.
///
/// On a rotation-invariant grid both phi-sectors that can carry the first
/// eigenfunction (m = 0 and m = 1) are searched, on the full s-line.
pub fn first_eigenvalue_with<T: Real>(rho: &MetricDensity<T>, opts: &EigenOptions) -> Result<EigenEstimate, AuditError> {
    let grid = rho.grid();
    let emb: Vec<[f64; 3]> = (0..grid.len()).map(|i| grid.node_embedding(i).map(|v| v.as_f64())).collect();
    if grid.nphi() == 1 {
        let x3: Vec<f64> = emb.iter().map(|e| e[2]).collect();
        let sech: Vec<f64> = grid.s_nodes().iter().map(|s| 1.0 / s.as_f64().cosh()).collect();
        let start0 = vec![x3.clone(), x3.iter().map(|x| x * x).collect(), x3.iter().map(|x| x * x * x).collect()];
        let start1 = vec![
            sech.clone(),
            sech.iter().zip(&x3).map(|(a, b)| a * b).collect(),
            sech.iter().zip(&x3).map(|(a, b)| a * b * b).collect(),
        ];
        let zero = vec![T::zero(); grid.ns()];
        let m1 = LineSolver::new(&line_operator(grid, &zero, lit(0.5)), false, false)
            .map_err(|row| LinearError::Singular { mode: 1, row })?;
        let a = block_inverse_iteration(rho, start0, true, 0.0, opts, |r| poisson_solve_with(grid, r, false))?;
        let b = block_inverse_iteration(rho, start1, false, 0.5, opts, |r| Ok(m1.solve(r)))?;
        let (value, iterations, sector) = if b.0 < a.0 { (b.0, b.1, 1) } else { (a.0, a.1, 0) };
        return Ok(EigenEstimate { value, iterations, sector });
    }
    let start: Vec<Vec<f64>> = vec![
        emb.iter().map(|e| e[0]).collect(),
        emb.iter().map(|e| e[1]).collect(),
        emb.iter().map(|e| e[2]).collect(),
        emb.iter().map(|e| e[0] * e[2]).collect(),
        emb.iter().map(|e| e[1] * e[2]).collect(),
        emb.iter().map(|e| e[0] * e[1]).collect(),
    ];
    let (value, iterations) = block_inverse_iteration(rho, start, true, 0.0, opts, |r| poisson_solve_with(grid, r, false))?;
    Ok(EigenEstimate { value, iterations, sector: 0 })
}

/// Inverse iteration for (-1/2 D2 + shift) f = lambda rho f with `solve` applying
/// (1/2 D2 - shift)^{-1}; `deflate` removes the constants.
fn block_inverse_iteration<T: Real>(
    rho: &MetricDensity<T>,
    start: Vec<Vec<f64>>,
    deflate: bool,
    shift: f64,
    opts: &EigenOptions,
    solve: impl Fn(&[T]) -> Result<Vec<T>, LinearError>,
) -> Result<(f64, usize), AuditError> {
    let grid = rho.grid();
    let n = grid.len();
    let w: Vec<f64> = (0..n).map(|i| grid.weight(i).as_f64()).collect();
    let r: Vec<f64> = rho.values().iter().map(|v| v.as_f64()).collect();
    let b_dot = |u: &[f64], v: &[f64]| -> f64 { (0..n).map(|i| w[i] * r[i] * u[i] * v[i]).sum() };
    let ones = vec![1.0; n];
    let b_ones = b_dot(&ones, &ones);
    let orthonormalize = |mut vs: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
        for v in vs.iter_mut() {
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                if deflate {
                    let c = b_dot(v, &ones) / b_ones;
                    v.iter_mut().for_each(|x| *x -= c);
                }
                for u in &out {
                    let c = b_dot(v, u);
                    v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nrm = b_dot(v, v).sqrt();
            if nrm > 1e-300 {
                out.push(v.iter().map(|x| x / nrm).collect());
            }
        }
        out
    };
    let mut x = orthonormalize(start);
    let mut prev = f64::INFINITY;
    let mut change = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let mut y = Vec::with_capacity(x.len());
        for v in &x {
            let rhs: Vec<T> = (0..n).map(|i| lit::<T>(-r[i] * v[i])).collect();
            let sol = solve(&rhs)?;
            y.push(sol.into_iter().map(|s| s.as_f64()).collect::<Vec<f64>>());
        }
        let y = orthonormalize(y);
        let k = y.len();
        let ay: Vec<Vec<f64>> = y
            .iter()
            .map(|v| {
                let vt: Vec<T> = v.iter().map(|&a| lit::<T>(a)).collect();
                grid.laplacian(&vt).into_iter().zip(v).map(|(l, &vi)| -0.5 * l.as_f64() + shift * vi).collect()
            })
            .collect();
        let h = DMatrix::from_fn(k, k, |a, b| {
            let ab: f64 = (0..n).map(|i| w[i] * y[a][i] * ay[b][i]).sum();
            let ba: f64 = (0..n).map(|i| w[i] * y[b][i] * ay[a][i]).sum();
            0.5 * (ab + ba)
        });
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        x = order
            .iter()
            .map(|&c| (0..n).map(|i| (0..k).map(|a| eig.eigenvectors[(a, c)] * y[a][i]).sum()).collect())
            .collect();
        let lam = eig.eigenvalues[order[0]];
        change = (lam - prev).abs() / lam.abs().max(1e-300);
        prev = lam;
        if iter >= 3 && change <= opts.tol {
            return Ok((lam, iter));
        }
    }
    Err(AuditError::EigenNonConvergence { iterations: opts.max_iter, change })
}
