//! Matrix-multiplication tensors and the transforms that leave them invariant.
//!
//! For `G = E F` with `E` of size `P×Q` and `F` of size `Q×S`, the tensor
//! `T_PQS` has size `PQ × QS × PS` and satisfies
//! `vec(G) = T ×₁ vec(Eᵀ)ᵀ ×₂ vec(Fᵀ)ᵀ` for all `E`, `F`. Mode 1 indexes the
//! row-major scan of `E`, mode 2 the row-major scan of `F` and mode 3 the
//! column-major scan of `G`:
//!
//! ```text
//! T[k·Q + m, m·S + n, n·P + k] = 1    k < P, m < Q, n < S   (0-based)
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Default cap on the number of dense entries a tensor may hold.
pub const DEFAULT_ENTRY_CAP: usize = 100_000_000;

/// The problem sizes `(P, Q, S)` of `E(P×Q) · F(Q×S)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct MatMulDims {
    p: usize,
    q: usize,
    s: usize,
}

impl MatMulDims {
    pub fn new(p: usize, q: usize, s: usize) -> Result<Self> {
        if p == 0 || q == 0 || s == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got ({p},{q},{s})"
            )));
        }
        Ok(Self { p, q, s })
    }

    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn s(&self) -> usize {
        self.s
    }

    /// Mode sizes `(PQ, QS, PS)`.
    pub fn mode_sizes(&self) -> [usize; 3] {
        [self.p * self.q, self.q * self.s, self.p * self.s]
    }

    /// The `(outer, inner)` split of each mode: mode 1 is `P×Q`, mode 2 is
    /// `Q×S`, mode 3 is `S×P`, each scanned row-major.
    pub fn mode_split(&self, mode: usize) -> (usize, usize) {
        match mode {
            0 => (self.p, self.q),
            1 => (self.q, self.s),
            2 => (self.s, self.p),
            _ => panic!("mode index {mode} out of range"),
        }
    }

    pub fn is_cubic(&self) -> bool {
        self.p == self.q && self.q == self.s
    }

    /// Number of ones in `T_PQS`, i.e. the classical multiplication count.
    pub fn classical_products(&self) -> usize {
        self.p * self.q * self.s
    }

    pub fn label(&self) -> String {
        format!("{}{}{}", self.p, self.q, self.s)
    }
}

impl TryFrom<[usize; 3]> for MatMulDims {
    type Error = Error;
    fn try_from([p, q, s]: [usize; 3]) -> Result<Self> {
        Self::new(p, q, s)
    }
}

impl From<MatMulDims> for [usize; 3] {
    fn from(d: MatMulDims) -> Self {
        [d.p, d.q, d.s]
    }
}

impl fmt::Display for MatMulDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.p, self.q, self.s)
    }
}

impl FromStr for MatMulDims {
    type Err = Error;
    /// Accepts `P,Q,S`, `PxQxS` or a three-digit label such as `332`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parts: Vec<&str> = if s.contains(',') {
            s.split(',').collect()
        } else if s.contains('x') {
            s.split('x').collect()
        } else if s.len() == 3 && s.chars().all(|c| c.is_ascii_digit()) {
            (0..3).map(|i| &s[i..i + 1]).collect()
        } else {
            return Err(Error::Parse(format!("cannot parse dims {s:?}")));
        };
        let v: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("dims {s:?}: {e}")))?;
        match v.as_slice() {
            &[p, q, s] => Self::new(p, q, s),
            _ => Err(Error::Parse(format!("dims {s:?} must have three entries"))),
        }
    }
}

/// Dense order-3 tensor, mode 1 fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    values: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn from_values(dims: [usize; 3], values: Vec<T>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in linear order, mode 1 fastest.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &T {
        &self.values[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let o = self.offset(i, j, k);
        self.values[o] = v;
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn map<U: Scalar>(&self, f: impl FnMut(&T) -> U) -> Tensor3<U> {
        Tensor3 {
            dims: self.dims,
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a + v.clone())
    }

    pub fn frobenius_sq(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |a, v| a + v.clone() * v.clone())
    }

    /// Squared Frobenius distance to `other`.
    pub fn distance_sq(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "tensor dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (a, b)| {
                let d = a.clone() - b.clone();
                acc + d.clone() * d
            }))
    }

    /// Frontal slice `k` as a matrix indexed by modes 1 and 2.
    pub fn frontal_slice(&self, k: usize) -> Matrix<T> {
        Matrix::from_fn(self.dims[0], self.dims[1], |i, j| self.get(i, j, k).clone())
    }

    /// Nonzero positions as 1-based `[i, j, k]` triples in linear order.
    pub fn nonzeros(&self) -> Vec<[usize; 3]> {
        let [n1, n2, _] = self.dims;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(o, _)| [o % n1 + 1, (o / n1) % n2 + 1, o / (n1 * n2) + 1])
            .collect()
    }
}

/// Builds `T_PQS` with the default entry cap.
pub fn build_matmul_tensor<T: Scalar>(dims: MatMulDims) -> Result<Tensor3<T>> {
    build_matmul_tensor_capped(dims, DEFAULT_ENTRY_CAP)
}

pub fn build_matmul_tensor_capped<T: Scalar>(dims: MatMulDims, cap: usize) -> Result<Tensor3<T>> {
    let sizes = dims.mode_sizes();
    let entries: u128 = sizes.iter().map(|&n| n as u128).product();
    if entries > cap as u128 {
        return Err(Error::TooLarge { entries, cap });
    }
    let (p, q, s) = (dims.p, dims.q, dims.s);
    let mut t = Tensor3::zeros(sizes);
    for k in 0..p {
        for m in 0..q {
            for n in 0..s {
                t.set(k * q + m, m * s + n, n * p + k, T::one());
            }
        }
    }
    Ok(t)
}

/// Evaluates `T ×₁ vec(Eᵀ)ᵀ ×₂ vec(Fᵀ)ᵀ`; for a multiplication tensor this
/// is the column-major `vec(EF)`.
pub fn apply_bilinear<T: Scalar>(t: &Tensor3<T>, e: &Matrix<T>, f: &Matrix<T>) -> Result<Vec<T>> {
    let u = e.vec_row_major();
    let v = f.vec_row_major();
    let [n1, n2, n3] = t.dims;
    if u.len() != n1 || v.len() != n2 || e.cols() != f.rows() {
        return Err(Error::Shape(format!(
            "tensor {:?} incompatible with E {:?} and F {:?}",
            t.dims,
            e.shape(),
            f.shape()
        )));
    }
    let mut out = vec![T::zero(); n3];
    for (k, o) in out.iter_mut().enumerate() {
        for j in 0..n2 {
            if v[j].is_zero() {
                continue;
            }
            for i in 0..n1 {
                let tv = t.get(i, j, k);
                if !tv.is_zero() {
                    *o = o.clone() + tv.clone() * u[i].clone() * v[j].clone();
                }
            }
        }
    }
    Ok(out)
}

/// Mode product `t ×ₘ m` (mode is 1-based). The output's mode size is `m.rows()`.
pub fn mode_product<T: Scalar>(t: &Tensor3<T>, m: &Matrix<T>, mode: usize) -> Result<Tensor3<T>> {
    if !(1..=3).contains(&mode) {
        return Err(Error::InvalidArgument(format!("mode {mode} not in 1..=3")));
    }
    let ax = mode - 1;
    if m.cols() != t.dims[ax] {
        return Err(Error::Shape(format!(
            "matrix with {} columns for mode {mode} of size {}",
            m.cols(),
            t.dims[ax]
        )));
    }
    let mut dims = t.dims;
    dims[ax] = m.rows();
    let mut out = Tensor3::<T>::zeros(dims);
    for k in 0..t.dims[2] {
        for j in 0..t.dims[1] {
            for i in 0..t.dims[0] {
                let v = t.get(i, j, k);
                if v.is_zero() {
                    continue;
                }
                let idx = [i, j, k];
                for r in 0..m.rows() {
                    let w = &m[(r, idx[ax])];
                    if w.is_zero() {
                        continue;
                    }
                    let mut at = idx;
                    at[ax] = r;
                    let o = out.offset(at[0], at[1], at[2]);
                    out.values[o] = out.values[o].clone() + w.clone() * v.clone();
                }
            }
        }
    }
    Ok(out)
}

/// `S₁(X) = I_P ⊗ Xᵀ`, acting on mode 1.
pub fn s1_transform<T: Scalar>(x: &Matrix<T>, dims: MatMulDims) -> Result<Matrix<T>> {
    if x.shape() != (dims.q, dims.q) {
        return Err(Error::Shape(format!(
            "S1 needs a {q}x{q} matrix, got {:?}",
            x.shape(),
            q = dims.q
        )));
    }
    Ok(Matrix::identity(dims.p).kron(&x.transpose()))
}

/// `S₂(X) = X⁻¹ ⊗ I_S`, acting on mode 2.
pub fn s2_transform<T: Scalar>(x: &Matrix<T>, dims: MatMulDims) -> Result<Matrix<T>> {
    if x.shape() != (dims.q, dims.q) {
        return Err(Error::Shape(format!(
            "S2 needs a {q}x{q} matrix, got {:?}",
            x.shape(),
            q = dims.q
        )));
    }
    let inv = checked_inverse(x)?;
    Ok(inv.kron(&Matrix::identity(dims.s)))
}

/// Inverse that rejects matrices whose determinant is negligible relative to `max|x|`.
pub(crate) fn checked_inverse<T: Scalar>(x: &Matrix<T>) -> Result<Matrix<T>> {
    let det = x.determinant();
    if det.is_negligible(&x.max_abs()) {
        return Err(Error::SingularTransform {
            det: det.to_f64_lossy(),
        });
    }
    x.inverse().ok_or(Error::SingularTransform {
        det: det.to_f64_lossy(),
    })
}

/// Index permutation in the MATLAB `permute` sense: output mode `d` is input
/// mode `perm[d]` (1-based).
pub fn cyclic_permute<T: Scalar>(t: &Tensor3<T>, perm: [usize; 3]) -> Result<Tensor3<T>> {
    let mut sorted = perm;
    sorted.sort_unstable();
    if sorted != [1, 2, 3] {
        return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation")));
    }
    let src = perm.map(|p| p - 1);
    let dims = src.map(|a| t.dims[a]);
    let mut out = Tensor3::zeros(dims);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let mut from = [0usize; 3];
                for (d, &a) in [i, j, k].iter().zip(&src) {
                    from[a] = *d;
                }
                out.set(i, j, k, t.get(from[0], from[1], from[2]).clone());
            }
        }
    }
    Ok(out)
}

/// JSON fixture listing the ones of a 0/1 tensor with 1-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorFixture {
    pub dims: [usize; 3],
    pub ones: Vec<[usize; 3]>,
}

impl TensorFixture {
    pub fn from_tensor<T: Scalar>(t: &Tensor3<T>) -> Result<Self> {
        if t.values.iter().any(|v| !v.is_zero() && !v.is_one()) {
            return Err(Error::InvalidArgument("tensor is not 0/1".into()));
        }
        Ok(Self {
            dims: t.dims,
            ones: t.nonzeros(),
        })
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor3<T>> {
        let mut t = Tensor3::zeros(self.dims);
        for &[i, j, k] in &self.ones {
            if i == 0 || j == 0 || k == 0 || i > self.dims[0] || j > self.dims[1] || k > self.dims[2] {
                return Err(Error::Parse(format!("index {:?} outside {:?}", [i, j, k], self.dims)));
            }
            t.set(i - 1, j - 1, k - 1, T::one());
        }
        Ok(t)
    }
}
