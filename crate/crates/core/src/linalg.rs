//! Dense Cholesky factorization for the damped normal equations.

use crate::scalar::Real;

/// Lower-triangular factor `L` with `M = L Lᵀ`, stored row-major.
#[derive(Clone, Debug)]
pub struct Cholesky<F> {
    n: usize,
    l: Vec<F>,
}

impl<F: Real> Cholesky<F> {
    /// Factors a symmetric matrix given row-major. Returns `None` when a pivot
    /// is not strictly positive.
    pub fn new(n: usize, m: &[F]) -> Option<Self> {
        assert_eq!(m.len(), n * n);
        let mut l = vec![F::zero(); n * n];
        for j in 0..n {
            let mut d = m[j * n + j];
            for k in 0..j {
                d = d - l[j * n + k] * l[j * n + k];
            }
            if !(d > F::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            let inv = F::one() / djj;
            for i in (j + 1)..n {
                let mut s = m[i * n + j];
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                for k in 0..j {
                    s = s - ri[k] * rj[k];
                }
                l[i * n + j] = s * inv;
            }
        }
        Some(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Cheap condition estimate `(max Lᵢᵢ / min Lᵢᵢ)²`.
    pub fn condition_estimate(&self) -> F {
        if self.n == 0 {
            return F::one();
        }
        let diag = (0..self.n).map(|i| self.l[i * self.n + i]);
        let (lo, hi) = diag.fold((F::infinity(), F::zero()), |(lo, hi), d| (lo.min(d), hi.max(d)));
        let r = hi / lo;
        r * r
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}
