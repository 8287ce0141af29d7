use crate::real::{lit, Real};

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions<T> {
    pub rtol: T,
    pub restart: usize,
    pub max_iter: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GmresOutcome<T> {
    pub iterations: usize,
    pub relative_residual: T,
    pub converged: bool,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Restarted GMRES with right preconditioning: solves A x = b with A M^{-1} y = b, x = M^{-1} y.
///
/// `x` holds the initial guess on entry and the iterate on exit.
pub fn gmres<T, A, M>(apply: A, precond: M, b: &[T], x: &mut [T], opts: GmresOptions<T>) -> GmresOutcome<T>
where
    T: Real,
    A: Fn(&[T]) -> Vec<T>,
    M: Fn(&[T]) -> Vec<T>,
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return GmresOutcome { iterations: 0, relative_residual: T::zero(), converged: true };
    }
    let m = opts.restart.max(1);
    let mut total = 0usize;
    let mut rel = T::infinity();

    while total < opts.max_iter {
        let ax = apply(x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= opts.rtol {
            return GmresOutcome { iterations: total, relative_residual: rel, converged: true };
        }

        let mut v: Vec<Vec<T>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|&ri| ri / beta).collect());
        let mut h = vec![vec![T::zero(); m]; m + 1];
        let mut cs = vec![T::zero(); m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..m {
            if total >= opts.max_iter {
                break;
            }
            total += 1;
            let z = precond(&v[k]);
            let mut w = apply(&z);
            // modified Gram-Schmidt, one reorthogonalization pass
            for _ in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let hij = dot(&w, vj);
                    h[j][k] = h[j][k] + hij;
                    for (wi, &vji) in w.iter_mut().zip(vj) {
                        *wi = *wi - hij * vji;
                    }
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;

            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == T::zero() {
                cs[k] = T::one();
                sn[k] = T::zero();
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
            h[k + 1][k] = T::zero();
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;

            let breakdown = hn <= T::epsilon() * lit(1e3) * bnorm;
            if rel <= opts.rtol || breakdown {
                break;
            }
            v.push(w.iter().map(|&wi| wi / hn).collect());
        }

        // back substitution for the least-squares coefficients
        let mut y = vec![T::zero(); k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc = acc - h[i][j] * y[j];
            }
            y[i] = if h[i][i] != T::zero() { acc / h[i][i] } else { T::zero() };
        }
        let mut u = vec![T::zero(); n];
        for (j, &yj) in y.iter().enumerate() {
            for (ui, &vji) in u.iter_mut().zip(&v[j]) {
                *ui = *ui + yj * vji;
            }
        }
        let du = precond(&u);
        for (xi, &d) in x.iter_mut().zip(&du) {
            *xi = *xi + d;
        }
        if rel <= opts.rtol {
            let ax = apply(x);
            let true_rel = norm(&b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect::<Vec<_>>()) / bnorm;
            // accept unless roundoff in the recurrence hid a real residual
            if true_rel <= opts.rtol * lit(10.0) {
                return GmresOutcome { iterations: total, relative_residual: true_rel, converged: true };
            }
            rel = true_rel;
        }
    }
    GmresOutcome { iterations: total, relative_residual: rel, converged: false }
}
