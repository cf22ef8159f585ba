//! Sparsification of exact decompositions by invariance transforms.
//!
//! For an inner dimension shared by two consecutive modes, any invertible
//! `X` gives an equivalent decomposition
//! `[[…, (I ⊗ Xᵀ)·F_left, (X⁻¹ ⊗ I)·F_right, …]]`. Mode pairs and their
//! shared sizes are `(A, B)` over `Q`, `(B, C)` over `S` and `(C, A)` over
//! `P`. For `P = Q = S = N` these are the usual `S₁(X)`, `S₂(X)` transforms
//! cycled through the three factor pairs. Each transform is chosen by
//! Nelder-Mead to minimize the L1 norm of the two affected factors over
//! determinant-one matrices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cp::{compose, residual_cost, FactorTriple};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::split_seed;
use crate::tensor::{build_matmul_tensor, MatMulDims};

/// Which mode pairs a sweep cycles through.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// All three pairs for cubic dims, `(A, B)` only otherwise.
    #[default]
    Auto,
    /// `(A, B)` only.
    Single,
    /// All three pairs with independent `Q×Q`, `S×S`, `P×P` transforms.
    ThreeSided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsifyConfig {
    pub max_sweeps: usize,
    /// Objective evaluations per Nelder-Mead call.
    pub nm_max_evals: usize,
    /// Simplex-size tolerance.
    pub nm_tol: f64,
    /// Smallest `|det X|` accepted before normalization.
    pub det_floor: f64,
    /// Minimum relative L1 decrease over a sweep to keep sweeping.
    pub l1_improve_tol: f64,
    /// Nelder-Mead starts per pair (the first at the identity).
    pub nm_restarts: usize,
    pub pair_mode: PairMode,
    pub seed: u64,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            nm_max_evals: 3000,
            nm_tol: 1e-9,
            det_floor: 1e-6,
            l1_improve_tol: 1e-6,
            nm_restarts: 5,
            pair_mode: PairMode::Auto,
            seed: 0,
        }
    }
}

/// The two factors touched by a transform over a shared inner dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModePair {
    /// Factor index multiplied by `I ⊗ Xᵀ`.
    pub left: usize,
    /// Factor index multiplied by `X⁻¹ ⊗ I`.
    pub right: usize,
    pub inner: usize,
    left_outer: usize,
    right_outer: usize,
}

impl ModePair {
    /// Pair `(m, m+1 mod 3)`; mode `m` splits as `outer×inner`, mode `m+1` as `inner×outer'`.
    pub fn new(dims: MatMulDims, left: usize) -> Self {
        let right = (left + 1) % 3;
        let (left_outer, inner) = dims.mode_split(left);
        let (inner2, right_outer) = dims.mode_split(right);
        debug_assert_eq!(inner, inner2);
        Self {
            left,
            right,
            inner,
            left_outer,
            right_outer,
        }
    }

    /// `(I ⊗ Xᵀ, X⁻¹ ⊗ I)` for `x` of size `inner×inner`.
    pub fn transforms(&self, x: &Matrix<f64>) -> Result<(Matrix<f64>, Matrix<f64>)> {
        if x.shape() != (self.inner, self.inner) {
            return Err(Error::Shape(format!(
                "transform of size {:?} for inner dimension {}",
                x.shape(),
                self.inner
            )));
        }
        let inv = crate::tensor::checked_inverse(x)?;
        Ok((
            Matrix::identity(self.left_outer).kron(&x.transpose()),
            inv.kron(&Matrix::identity(self.right_outer)),
        ))
    }

    pub fn apply(&self, f: &FactorTriple<f64>, x: &Matrix<f64>) -> Result<FactorTriple<f64>> {
        let (tl, tr) = self.transforms(x)?;
        let mut ms: [Option<&Matrix<f64>>; 3] = [None, None, None];
        ms[self.left] = Some(&tl);
        ms[self.right] = Some(&tr);
        f.transformed(ms[0], ms[1], ms[2])
    }
}

pub fn pairs_for(dims: MatMulDims, mode: PairMode) -> Vec<ModePair> {
    let all = match mode {
        PairMode::Auto => dims.is_cubic(),
        PairMode::Single => false,
        PairMode::ThreeSided => true,
    };
    if all {
        (0..3).map(|m| ModePair::new(dims, m)).collect()
    } else {
        vec![ModePair::new(dims, 0)]
    }
}

/// Rescales `x` to determinant one: `X / det^{1/N}`, using the real root for
/// odd `N`, and negating the first row first when `N` is even and `det < 0`.
/// Returns `None` when `|det| < det_floor`.
pub fn normalize_det(x: &Matrix<f64>, det_floor: f64) -> Option<Matrix<f64>> {
    let n = x.rows();
    let mut x = x.clone();
    let mut det = x.determinant();
    if !det.is_finite() || det.abs() < det_floor {
        return None;
    }
    if det < 0.0 && n % 2 == 0 {
        for j in 0..n {
            x[(0, j)] = -x[(0, j)];
        }
        det = -det;
    }
    let root = det.signum() * det.abs().powf(1.0 / n as f64);
    Some(x.map(|v| v / root))
}

/// `‖S₁(X̃)·fa‖₁ + ‖S₂(X̃)·fb‖₁` with `X̃` the determinant-one rescaling of `x`;
/// `+∞` when `|det x| < det_floor`.
pub fn l1_objective(x: &Matrix<f64>, fa: &Matrix<f64>, fb: &Matrix<f64>, dims: MatMulDims, det_floor: f64) -> f64 {
    pair_objective(&ModePair::new(dims, 0), x, fa, fb, det_floor)
}

fn pair_objective(pair: &ModePair, x: &Matrix<f64>, fl: &Matrix<f64>, fr: &Matrix<f64>, det_floor: f64) -> f64 {
    let Some(xn) = normalize_det(x, det_floor) else {
        return f64::INFINITY;
    };
    let Ok((tl, tr)) = pair.transforms(&xn) else {
        return f64::INFINITY;
    };
    match (tl.matmul(fl), tr.matmul(fr)) {
        (Ok(a), Ok(b)) => a.l1_norm() + b.l1_norm(),
        _ => f64::INFINITY,
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    /// Best objective value after each iteration.
    pub best_history: Vec<f64>,
}

/// Nelder-Mead with reflection 1, expansion 2, contraction 0.5 and shrink 0.5.
///
/// The initial simplex is `x0` plus one vertex per coordinate offset by 0.1
/// (by −0.1 when the positive offset is infeasible).
pub fn nelder_mead_minimize(
    objective: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    max_evals: usize,
    tol: f64,
) -> NelderMeadResult {
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += 0.1;
        let mut fv = eval(&v);
        if !fv.is_finite() {
            v[i] = x0[i] - 0.1;
            fv = eval(&v);
        }
        simplex.push((v, fv));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let mut best_history = vec![simplex[0].1];

    while evals.get() < max_evals && n > 0 {
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if size < tol {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(v, _)| v[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (v, fv) in simplex.iter_mut().skip(1) {
                    for (a, b) in v.iter_mut().zip(&best) {
                        *a = b + 0.5 * (*a - b);
                    }
                    *fv = eval(v);
                }
            }
        }
        order(&mut simplex);
        best_history.push(simplex[0].1);
    }
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        fx,
        evals: evals.get(),
        best_history,
    }
}

/// Best determinant-one `X` for one pair, starting at the identity and at
/// `nm_restarts − 1` random perturbations of it. Returns `None` when nothing
/// beats the identity.
fn optimize_pair(
    pair: &ModePair,
    f: &FactorTriple<f64>,
    config: &SparsifyConfig,
    seed: u64,
) -> Option<(Matrix<f64>, f64)> {
    let factors = f.factors();
    let (fl, fr) = (factors[pair.left], factors[pair.right]);
    let n = pair.inner;
    let objective = |v: &[f64]| {
        let x = Matrix::from_row_major(n, n, v.to_vec()).expect("n² entries");
        pair_objective(pair, &x, fl, fr, config.det_floor)
    };
    let identity = Matrix::<f64>::identity(n);
    let base = fl.l1_norm() + fr.l1_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in 0..config.nm_restarts.max(1) {
        let mut x0 = identity.vec_row_major();
        if start > 0 {
            for v in &mut x0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.3 * z;
            }
            if !objective(&x0).is_finite() {
                continue;
            }
        }
        let res = nelder_mead_minimize(objective, &x0, config.nm_max_evals, config.nm_tol);
        if best.as_ref().map_or(true, |(_, fb)| res.fx < *fb) {
            best = Some((res.x, res.fx));
        }
    }
    let (x, fx) = best?;
    if !(fx < base) {
        return None;
    }
    let x = Matrix::from_row_major(n, n, x).ok()?;
    normalize_det(&x, config.det_floor).map(|xn| (xn, fx))
}

#[derive(Clone, Debug)]
pub struct SparsifyOutcome {
    pub factors: FactorTriple<f64>,
    pub sweeps: usize,
    /// Total L1 norm before the first sweep and after each sweep.
    pub l1_history: Vec<f64>,
    /// Determinant-one transforms that were applied, with their pair's left factor.
    pub applied: Vec<(usize, Matrix<f64>)>,
}

/// Cycles over the mode pairs, applying the best determinant-one transform
/// for each, until a sweep improves the total L1 norm by less than
/// `l1_improve_tol` (relative) or `max_sweeps` is reached.
///
/// Requires an exact fit (`φ ≤ 1e-12`). Transforms that would change the
/// reconstruction by more than `1e-8` in Frobenius norm are skipped.
pub fn sparsify_cycle(f: &FactorTriple<f64>, dims: MatMulDims, config: &SparsifyConfig) -> Result<SparsifyOutcome> {
    let target = build_matmul_tensor::<f64>(dims)?;
    let phi = residual_cost(f, &target)?;
    if phi > 1e-12 {
        return Err(Error::NotExactFit { phi });
    }
    let reference = compose(f);
    let pairs = pairs_for(dims, config.pair_mode);
    let mut current = f.clone();
    let mut history = vec![current.l1_norm()];
    let mut applied = Vec::new();
    let mut sweeps = 0;
    let mut call = 0u64;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let before = current.l1_norm();
        for pair in &pairs {
            let seed = split_seed(config.seed, call);
            call += 1;
            let Some((x, _)) = optimize_pair(pair, &current, config, seed) else {
                continue;
            };
            let Ok(next) = pair.apply(&current, &x) else {
                continue;
            };
            let drift = compose(&next).distance_sq(&reference)?.sqrt();
            if drift <= 1e-8 && next.l1_norm() < current.l1_norm() {
                current = next;
                applied.push((pair.left, x));
            }
        }
        let after = current.l1_norm();
        history.push(after);
        if before - after < config.l1_improve_tol * before {
            break;
        }
    }
    Ok(SparsifyOutcome {
        factors: current,
        sweeps,
        l1_history: history,
        applied,
    })
}

/// Sparsity summary of a factor triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub l1: f64,
    /// Entries with magnitude at least `1e-10`.
    pub nnz: usize,
    /// Entries within `1e-6` of `±1`.
    pub nnz_unit: usize,
}

pub fn sparsity_report(f: &FactorTriple<f64>) -> SparsityReport {
    let values: Vec<f64> = f.to_theta();
    SparsityReport {
        l1: f.l1_norm(),
        nnz: values.iter().filter(|v| v.abs() >= 1e-10).count(),
        nnz_unit: values.iter().filter(|v| (v.abs() - 1.0).abs() <= 1e-6).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn strassen_f64() -> FactorTriple<f64> {
        fixtures::strassen().map(|v| crate::scalar::Scalar::to_f64_lossy(v))
    }

    fn d(p: usize, q: usize, s: usize) -> MatMulDims {
        MatMulDims::new(p, q, s).unwrap()
    }

    #[test]
    fn identity_objective_is_plain_l1() {
        let f = strassen_f64();
        let i2 = Matrix::identity(2);
        let v = l1_objective(&i2, f.a(), f.b(), d(2, 2, 2), 1e-6);
        assert_eq!(v, f.a().l1_norm() + f.b().l1_norm());
        assert_eq!(v, 24.0);
    }

    #[test]
    fn scaled_identity_objective_unchanged() {
        let f = strassen_f64();
        let x = Matrix::identity(2).map(|v: &f64| v * 3.7);
        assert!((l1_objective(&x, f.a(), f.b(), d(2, 2, 2), 1e-6) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn singular_objective_is_infinite() {
        let f = strassen_f64();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(l1_objective(&x, f.a(), f.b(), d(2, 2, 2), 1e-6), f64::INFINITY);
    }

    #[test]
    fn normalization_reaches_unit_determinant() {
        let cases = [
            Matrix::from_rows(&[vec![2.0, 1.0], vec![0.5, 3.0]]).unwrap(),
            Matrix::from_rows(&[vec![0.0, 2.0], vec![1.5, 0.0]]).unwrap(),
            Matrix::from_rows(&[vec![-1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.3, 4.0]]).unwrap(),
        ];
        for x in cases {
            let xn = normalize_det(&x, 1e-9).unwrap();
            assert!((xn.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn nelder_mead_finds_identity() {
        let target = [1.0, 0.0, 0.0, 1.0];
        let obj = |v: &[f64]| v.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let res = nelder_mead_minimize(obj, &[1.05, 0.02, -0.03, 0.97], 5000, 1e-10);
        for (a, b) in res.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8, "{:?}", res.x);
        }
        assert!(res.best_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nelder_mead_one_dimensional_quadratic() {
        let res = nelder_mead_minimize(|v| (v[0] - 0.7).powi(2) + 2.0, &[3.0], 2000, 1e-10);
        assert!((res.x[0] - 0.7).abs() <= 1e-9);
        assert!(res.fx <= 2.0 + 1e-15);
    }

    #[test]
    fn strassen_is_already_sparse() {
        let f = strassen_f64();
        let out = sparsify_cycle(&f, d(2, 2, 2), &SparsifyConfig::default()).unwrap();
        assert_eq!(out.factors.l1_norm(), f.l1_norm());
        let r = sparsity_report(&out.factors);
        assert_eq!((r.l1, r.nnz, r.nnz_unit), (36.0, 36, 36));
    }

    #[test]
    fn refuses_non_exact_input() {
        let f = strassen_f64().map(|v| v * 1.01);
        assert!(matches!(
            sparsify_cycle(&f, d(2, 2, 2), &SparsifyConfig::default()),
            Err(Error::NotExactFit { .. })
        ));
    }

    #[test]
    fn every_pair_preserves_t332() {
        let dims = d(3, 3, 2);
        let f = fixtures::t332_rank15().map(|v| crate::scalar::Scalar::to_f64_lossy(v));
        let t = build_matmul_tensor::<f64>(dims).unwrap();
        for pair in pairs_for(dims, PairMode::ThreeSided) {
            let n = pair.inner;
            let x = Matrix::from_fn(n, n, |i, j| if i == j { 1.5 } else { 0.25 * (i as f64 - j as f64) });
            let g = pair.apply(&f, &x).unwrap();
            assert!(residual_cost(&g, &t).unwrap() < 1e-20, "pair {}", pair.left);
        }
        assert_eq!(pairs_for(dims, PairMode::Auto).len(), 1);
        assert_eq!(pairs_for(d(3, 3, 3), PairMode::Auto).len(), 3);
    }
}
