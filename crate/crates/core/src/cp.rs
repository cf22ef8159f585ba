//! Rank-R CP models `[[A, B, C]]` and their least-squares derivatives.
//!
//! The parameter vector is `θ = [vec(A); vec(B); vec(C)]` with column-major
//! `vec`. The residual used for derivatives is `vec(T̂(θ) − T)`, so the
//! returned gradient `g = Jᵀ(T̂ − T)` is half the gradient of
//! `φ(θ) = ‖T − T̂(θ)‖²_F` and `θ − (H + μI)⁻¹ g` is a descent update.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Factor matrices `A (n1×R)`, `B (n2×R)`, `C (n3×R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTriple<T> {
    a: Matrix<T>,
    b: Matrix<T>,
    c: Matrix<T>,
}

impl<T: Scalar> FactorTriple<T> {
    pub fn new(a: Matrix<T>, b: Matrix<T>, c: Matrix<T>) -> Result<Self> {
        if a.cols() != b.cols() || b.cols() != c.cols() {
            return Err(Error::Shape(format!(
                "factor column counts differ: {}, {}, {}",
                a.cols(),
                b.cols(),
                c.cols()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn zeros(mode_sizes: [usize; 3], rank: usize) -> Self {
        Self {
            a: Matrix::zeros(mode_sizes[0], rank),
            b: Matrix::zeros(mode_sizes[1], rank),
            c: Matrix::zeros(mode_sizes[2], rank),
        }
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }
    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }
    pub fn c(&self) -> &Matrix<T> {
        &self.c
    }

    pub fn factors(&self) -> [&Matrix<T>; 3] {
        [&self.a, &self.b, &self.c]
    }

    pub fn into_factors(self) -> [Matrix<T>; 3] {
        [self.a, self.b, self.c]
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn mode_sizes(&self) -> [usize; 3] {
        [self.a.rows(), self.b.rows(), self.c.rows()]
    }

    pub fn param_count(&self) -> usize {
        self.mode_sizes().iter().sum::<usize>() * self.rank()
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(&T) -> U) -> FactorTriple<U> {
        FactorTriple {
            a: self.a.map(&mut f),
            b: self.b.map(&mut f),
            c: self.c.map(&mut f),
        }
    }

    /// Total entrywise L1 norm `‖A‖₁ + ‖B‖₁ + ‖C‖₁`.
    pub fn l1_norm(&self) -> T {
        self.a.l1_norm() + self.b.l1_norm() + self.c.l1_norm()
    }

    /// `[vec(A); vec(B); vec(C)]`, column-major within each factor.
    pub fn to_theta(&self) -> Vec<T> {
        let mut v = self.a.vec_col_major();
        v.extend(self.b.vec_col_major());
        v.extend(self.c.vec_col_major());
        v
    }

    pub fn from_theta(theta: &[T], mode_sizes: [usize; 3], rank: usize) -> Result<Self> {
        let total: usize = mode_sizes.iter().sum::<usize>() * rank;
        if theta.len() != total {
            return Err(Error::Shape(format!(
                "theta of length {} for mode sizes {mode_sizes:?} and rank {rank}",
                theta.len()
            )));
        }
        let mut off = 0;
        let mut take = |n: usize| {
            let m = Matrix::from_fn(n, rank, |i, r| theta[off + r * n + i].clone());
            off += n * rank;
            m
        };
        let a = take(mode_sizes[0]);
        let b = take(mode_sizes[1]);
        let c = take(mode_sizes[2]);
        Ok(Self { a, b, c })
    }

    /// Replaces the factors with `[[ma·A, mb·B, mc·C]]` for the given mode
    /// matrices (`None` keeps a factor).
    pub fn transformed(
        &self,
        ma: Option<&Matrix<T>>,
        mb: Option<&Matrix<T>>,
        mc: Option<&Matrix<T>>,
    ) -> Result<Self> {
        let apply = |m: Option<&Matrix<T>>, f: &Matrix<T>| match m {
            Some(m) => m.matmul(f),
            None => Ok(f.clone()),
        };
        Self::new(apply(ma, &self.a)?, apply(mb, &self.b)?, apply(mc, &self.c)?)
    }

    fn check_target(&self, dims: [usize; 3]) -> Result<()> {
        if self.mode_sizes() != dims {
            return Err(Error::Shape(format!(
                "factors of mode sizes {:?} for a tensor of dims {dims:?}",
                self.mode_sizes()
            )));
        }
        Ok(())
    }
}

/// Flat parameters plus a mask of free coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    pub theta: Vec<T>,
    /// `true` marks a free coordinate; `false` is frozen at its current value.
    pub mask: Vec<bool>,
    mode_sizes: [usize; 3],
    rank: usize,
}

impl<T: Scalar> ParamVector<T> {
    pub fn from_factors(f: &FactorTriple<T>) -> Self {
        let theta = f.to_theta();
        Self {
            mask: vec![true; theta.len()],
            theta,
            mode_sizes: f.mode_sizes(),
            rank: f.rank(),
        }
    }

    pub fn new(theta: Vec<T>, mask: Vec<bool>, mode_sizes: [usize; 3], rank: usize) -> Result<Self> {
        let total = mode_sizes.iter().sum::<usize>() * rank;
        if theta.len() != total || mask.len() != total {
            return Err(Error::Shape(format!(
                "theta/mask lengths {}/{} for {total} parameters",
                theta.len(),
                mask.len()
            )));
        }
        Ok(Self {
            theta,
            mask,
            mode_sizes,
            rank,
        })
    }

    pub fn to_factors(&self) -> FactorTriple<T> {
        FactorTriple::from_theta(&self.theta, self.mode_sizes, self.rank)
            .expect("lengths validated at construction")
    }

    pub fn mode_sizes(&self) -> [usize; 3] {
        self.mode_sizes
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn norm_sq(&self) -> T {
        self.theta
            .iter()
            .fold(T::zero(), |a, v| a + v.clone() * v.clone())
    }

    /// Squared norm of the frozen coordinates.
    pub fn frozen_norm_sq(&self) -> T {
        self.theta
            .iter()
            .zip(&self.mask)
            .filter(|(_, &free)| !free)
            .fold(T::zero(), |a, (v, _)| a + v.clone() * v.clone())
    }
}

/// `Σᵣ aᵣ ∘ bᵣ ∘ cᵣ`.
pub fn compose<T: Scalar>(f: &FactorTriple<T>) -> Tensor3<T> {
    let dims = f.mode_sizes();
    let mut t = Tensor3::<T>::zeros(dims);
    let [n1, n2, n3] = dims;
    let values = t.values_mut();
    for r in 0..f.rank() {
        for k in 0..n3 {
            let ck = &f.c[(k, r)];
            if ck.is_zero() {
                continue;
            }
            for j in 0..n2 {
                let bc = f.b[(j, r)].clone() * ck.clone();
                if bc.is_zero() {
                    continue;
                }
                let base = n1 * (j + n2 * k);
                for i in 0..n1 {
                    let a = &f.a[(i, r)];
                    if !a.is_zero() {
                        values[base + i] = values[base + i].clone() + a.clone() * bc.clone();
                    }
                }
            }
        }
    }
    t
}

/// `φ = ‖target − compose(f)‖²_F`.
pub fn residual_cost<T: Scalar>(f: &FactorTriple<T>, target: &Tensor3<T>) -> Result<T> {
    f.check_target(target.dims())?;
    compose(f).distance_sq(target)
}

/// Explicit Jacobian `∂vec(T̂)/∂θ`, rows in tensor linear order (mode 1 fastest).
pub fn jacobian<T: Scalar>(f: &FactorTriple<T>, target_dims: [usize; 3]) -> Result<Matrix<T>> {
    f.check_target(target_dims)?;
    let [n1, n2, n3] = target_dims;
    let rank = f.rank();
    let (ob, oc) = (n1 * rank, (n1 + n2) * rank);
    let mut jac = Matrix::zeros(n1 * n2 * n3, f.param_count());
    for k in 0..n3 {
        for j in 0..n2 {
            for i in 0..n1 {
                let row = i + n1 * (j + n2 * k);
                for r in 0..rank {
                    let (a, b, c) = (&f.a[(i, r)], &f.b[(j, r)], &f.c[(k, r)]);
                    jac[(row, r * n1 + i)] = b.clone() * c.clone();
                    jac[(row, ob + r * n2 + j)] = a.clone() * c.clone();
                    jac[(row, oc + r * n3 + k)] = a.clone() * b.clone();
                }
            }
        }
    }
    Ok(jac)
}

fn gram<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(m.cols(), m.cols(), |r, s| {
        (0..m.rows()).fold(T::zero(), |acc, i| acc + m[(i, r)].clone() * m[(i, s)].clone())
    })
}

/// Gradient `g = Jᵀ vec(T̂ − T)` and Gauss-Newton matrix `H = JᵀJ`, assembled
/// from the factor Gram matrices without forming `J`.
pub fn gradient_and_gn_hessian<T: Scalar>(
    f: &FactorTriple<T>,
    target: &Tensor3<T>,
) -> Result<(Vec<T>, Matrix<T>)> {
    let resid = residual_tensor(f, target)?;
    Ok((gradient_from_residual(f, &resid), gn_hessian(f)))
}

/// `T̂ − T`.
pub fn residual_tensor<T: Scalar>(f: &FactorTriple<T>, target: &Tensor3<T>) -> Result<Tensor3<T>> {
    f.check_target(target.dims())?;
    let mut e = compose(f);
    for (v, t) in e.values_mut().iter_mut().zip(target.values()) {
        *v = v.clone() - t.clone();
    }
    Ok(e)
}

/// `Jᵀ vec(resid)` via matricized-tensor-times-Khatri-Rao products.
pub fn gradient_from_residual<T: Scalar>(f: &FactorTriple<T>, resid: &Tensor3<T>) -> Vec<T> {
    let [n1, n2, n3] = f.mode_sizes();
    let rank = f.rank();
    let mut ga = Matrix::<T>::zeros(n1, rank);
    let mut gb = Matrix::<T>::zeros(n2, rank);
    let mut gc = Matrix::<T>::zeros(n3, rank);
    for k in 0..n3 {
        for j in 0..n2 {
            for i in 0..n1 {
                let e = resid.get(i, j, k);
                if e.is_zero() {
                    continue;
                }
                for r in 0..rank {
                    let (a, b, c) = (&f.a[(i, r)], &f.b[(j, r)], &f.c[(k, r)]);
                    ga[(i, r)] = ga[(i, r)].clone() + e.clone() * b.clone() * c.clone();
                    gb[(j, r)] = gb[(j, r)].clone() + e.clone() * a.clone() * c.clone();
                    gc[(k, r)] = gc[(k, r)].clone() + e.clone() * a.clone() * b.clone();
                }
            }
        }
    }
    let mut g = ga.vec_col_major();
    g.extend(gb.vec_col_major());
    g.extend(gc.vec_col_major());
    g
}

/// `JᵀJ` from Gram matrices:
/// `H_AA = I ⊗ (BᵀB ∗ CᵀC)` blockwise and
/// `H_AB[(i,r),(j,s)] = A[i,s]·B[j,r]·(CᵀC)[r,s]`, cyclically for the other pairs.
pub fn gn_hessian<T: Scalar>(f: &FactorTriple<T>) -> Matrix<T> {
    let sizes = f.mode_sizes();
    let rank = f.rank();
    let factors = f.factors();
    let grams: Vec<Matrix<T>> = factors.iter().map(|m| gram(m)).collect();
    let offsets = [0, sizes[0] * rank, (sizes[0] + sizes[1]) * rank];
    let n = f.param_count();
    let mut h = Matrix::zeros(n, n);

    // Diagonal blocks: Hadamard product of the other two Grams.
    for mode in 0..3 {
        let (o1, o2) = ((mode + 1) % 3, (mode + 2) % 3);
        let nm = sizes[mode];
        for r in 0..rank {
            for s in 0..rank {
                let w = grams[o1][(r, s)].clone() * grams[o2][(r, s)].clone();
                for i in 0..nm {
                    h[(offsets[mode] + r * nm + i, offsets[mode] + s * nm + i)] = w.clone();
                }
            }
        }
    }

    // Off-diagonal blocks for (x, y) with the Gram of the remaining mode.
    for (x, y, z) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
        let (fx, fy, gz) = (factors[x], factors[y], &grams[z]);
        let (nx, ny) = (sizes[x], sizes[y]);
        for r in 0..rank {
            for s in 0..rank {
                let w = &gz[(r, s)];
                if w.is_zero() {
                    continue;
                }
                for i in 0..nx {
                    let xi = fx[(i, s)].clone() * w.clone();
                    let row = offsets[x] + r * nx + i;
                    for j in 0..ny {
                        let v = xi.clone() * fy[(j, r)].clone();
                        let col = offsets[y] + s * ny + j;
                        h[(row, col)] = v.clone();
                        h[(col, row)] = v;
                    }
                }
            }
        }
    }
    h
}
