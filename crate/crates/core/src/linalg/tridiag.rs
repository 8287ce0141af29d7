use crate::real::{lit, Real};

/// LU factorization of a general tridiagonal matrix with partial pivoting.
///
/// Same elimination order as LAPACK `gttrf`; the fill-in ends up in a second
/// superdiagonal.
#[derive(Clone, Debug)]
pub struct TridiagLu<T: Real> {
    d: Vec<T>,
    du: Vec<T>,
    du2: Vec<T>,
    l: Vec<T>,
    swap: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularPivot {
    pub row: usize,
}

impl<T: Real> TridiagLu<T> {
    /// `sub[i]` couples row i+1 to column i, `sup[i]` couples row i to column i+1.
    pub fn factor(sub: &[T], diag: &[T], sup: &[T]) -> Result<Self, SingularPivot> {
        let n = diag.len();
        assert!(n >= 2 && sub.len() == n - 1 && sup.len() == n - 1);
        let scale = diag
            .iter()
            .chain(sub)
            .chain(sup)
            .fold(T::zero(), |m, x| m.max(x.abs()));
        let tiny = scale * T::epsilon() * lit(16.0);

        let mut d = diag.to_vec();
        let mut du = sup.to_vec();
        let mut dl = sub.to_vec();
        let mut du2 = vec![T::zero(); n.saturating_sub(2)];
        let mut l = vec![T::zero(); n - 1];
        let mut swap = vec![false; n - 1];

        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() <= tiny {
                    return Err(SingularPivot { row: i });
                }
                let f = dl[i] / d[i];
                l[i] = f;
                d[i + 1] = d[i + 1] - f * du[i];
            } else {
                let f = d[i] / dl[i];
                l[i] = f;
                swap[i] = true;
                d[i] = dl[i];
                let tmp = d[i + 1];
                d[i + 1] = du[i] - f * tmp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du2[i];
                }
                du[i] = tmp;
            }
            dl[i] = T::zero();
        }
        if d[n - 1].abs() <= tiny || !d[n - 1].is_finite() {
            return Err(SingularPivot { row: n - 1 });
        }
        Ok(TridiagLu { d, du, du2, l, swap })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.d.len();
        for i in 0..n - 1 {
            if self.swap[i] {
                let tmp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tmp - self.l[i] * b[i + 1];
            } else {
                b[i + 1] = b[i + 1] - self.l[i] * b[i];
            }
        }
        b[n - 1] = b[n - 1] / self.d[n - 1];
        b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// Tridiagonal matrix stored by bands.
#[derive(Clone, Debug)]
pub struct Tridiag<T: Real> {
    pub sub: Vec<T>,
    pub diag: Vec<T>,
    pub sup: Vec<T>,
}

impl<T: Real> Tridiag<T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y = y + self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y = y + self.sup[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Restricts the operator to fields with x_j = x_{n-1-j}, keeping rows 0..ceil(n/2).
    pub fn fold_even(&self) -> Tridiag<T> {
        let n = self.diag.len();
        let m = n.div_ceil(2);
        let fold = |j: usize| j.min(n - 1 - j);
        let mut sub = vec![T::zero(); m - 1];
        let mut diag = vec![T::zero(); m];
        let mut sup = vec![T::zero(); m - 1];
        for i in 0..m {
            let mut add = |col: usize, v: T| {
                let c = fold(col);
                if c == i {
                    diag[i] = diag[i] + v;
                } else if c + 1 == i {
                    sub[i - 1] = sub[i - 1] + v;
                } else if c == i + 1 {
                    sup[i] = sup[i] + v;
                } else {
                    unreachable!("folded column {c} outside the band of row {i}");
                }
            };
            add(i, self.diag[i]);
            if i > 0 {
                add(i - 1, self.sub[i - 1]);
            }
            if i + 1 < n {
                add(i + 1, self.sup[i]);
            }
        }
        Tridiag { sub, diag, sup }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_solve_matches_dense() {
        // indefinite matrix that needs row swaps
        let sub = vec![3.0, -1.0, 2.0, 0.5];
        let diag = vec![0.1, -0.2, 1.0, 1e-3, 2.0];
        let sup = vec![1.0, 4.0, -2.0, 1.0];
        let a = Tridiag { sub: sub.clone(), diag: diag.clone(), sup: sup.clone() };
        let x: Vec<f64> = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let mut b = a.apply(&x);
        TridiagLu::factor(&sub, &diag, &sup).unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
    }

    #[test]
    fn singular_is_reported() {
        // rows 0 and 1 coincide
        let r = TridiagLu::factor(&[1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn fold_even_restricts_exactly() {
        for n in [6usize, 7] {
            let sub: Vec<f64> = (0..n - 1).map(|i| 1.0 + i as f64).collect();
            let sup: Vec<f64> = (0..n - 1).map(|i| 2.0 - 0.1 * i as f64).collect();
            let diag: Vec<f64> = (0..n).map(|i| -3.0 + 0.2 * i as f64).collect();
            let a = Tridiag { sub, diag, sup };
            let m = n.div_ceil(2);
            let half: Vec<f64> = (0..m).map(|i| (i as f64 + 1.0).sqrt()).collect();
            let full: Vec<f64> = (0..n).map(|j| half[j.min(n - 1 - j)]).collect();
            let y = a.apply(&full);
            let yf = a.fold_even().apply(&half);
            for i in 0..m {
                assert!((y[i] - yf[i]).abs() < 1e-12);
            }
        }
    }
}
