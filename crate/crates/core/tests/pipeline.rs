use std::collections::BTreeSet;

use matmul_cp::bilinear::{export_bilinear, run_bilinear, BilinearProgram};
use matmul_cp::experiment::{classify, cmd_sweep, Classification, ClassifyConfig, SweepSpec};
use matmul_cp::fixtures::{strassen, t332_rank15};
use matmul_cp::rationalize::{snap_and_refit, verify_exact, SnapPlan, Verification};
use matmul_cp::scalar::Scalar;
use matmul_cp::{BigRational, FactorTriple, MatMulDims, Matrix, SolverConfig};
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims(p: usize, q: usize, s: usize) -> MatMulDims {
    MatMulDims::new(p, q, s).unwrap()
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rational: bool) -> Matrix<BigRational> {
    Matrix::from_fn(rows, cols, |_, _| {
        let n = rng.gen_range(-50i64..=50);
        let d = if rational { rng.gen_range(1i64..=12) } else { 1 };
        rat(n, d)
    })
}

fn check_soundness(prog: &BilinearProgram, d: MatMulDims, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for rational in [false, true] {
        for _ in 0..200 {
            let e = random_matrix(&mut rng, d.p(), d.q(), rational);
            let f = random_matrix(&mut rng, d.q(), d.s(), rational);
            let run = run_bilinear(prog, &e, &f).unwrap();
            assert_eq!(run.g, e.matmul(&f).unwrap());
            assert_eq!(run.products, prog.rank());
        }
    }
}

#[test]
fn shipped_programs_are_exact_on_random_inputs() {
    check_soundness(&export_bilinear(&strassen(), dims(2, 2, 2)).unwrap(), dims(2, 2, 2), 1);
    check_soundness(&export_bilinear(&t332_rank15(), dims(3, 3, 2)).unwrap(), dims(3, 3, 2), 2);
}

#[test]
fn rescaled_columns_still_certify() {
    let f = strassen();
    let [a, b, c] = f.into_factors();
    let scale = |r: usize| rat(r as i64 + 2, 3);
    let a = Matrix::from_fn(a.rows(), a.cols(), |i, r| a[(i, r)].clone() * scale(r));
    let b = Matrix::from_fn(b.rows(), b.cols(), |i, r| b[(i, r)].clone() * rat(-2, 1));
    let c = Matrix::from_fn(c.rows(), c.cols(), |i, r| c[(i, r)].clone() / (scale(r) * rat(-2, 1)));
    let g = FactorTriple::new(a, b, c).unwrap();
    assert!(verify_exact(&g, dims(2, 2, 2)).unwrap().is_certified());
}

#[test]
fn flipped_entry_is_a_counterexample() {
    let [mut a, b, c] = strassen().into_factors();
    a[(0, 0)] = a[(0, 0)].clone() + rat(1, 1);
    let g = FactorTriple::new(a, b, c).unwrap();
    match verify_exact(&g, dims(2, 2, 2)).unwrap() {
        Verification::Counterexample { index, .. } => assert!(index.iter().all(|&i| i >= 1)),
        Verification::Certified(_) => panic!("corrupted factors certified"),
    }
}

/// Rank-one terms `a_r ⊗ b_r ⊗ c_r` as a set, independent of column order and scaling.
fn rank_one_terms(f: &FactorTriple<BigRational>) -> BTreeSet<Vec<String>> {
    let [a, b, c] = f.factors();
    (0..f.rank())
        .map(|r| {
            let (ca, cb, cc) = (a.column(r), b.column(r), c.column(r));
            let mut out = Vec::new();
            for x in &ca {
                for y in &cb {
                    for z in &cc {
                        out.push((x.clone() * y.clone() * z.clone()).to_string());
                    }
                }
            }
            out
        })
        .collect()
}

#[test]
fn perturbed_strassen_snaps_back() {
    let exact = strassen();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noisy = exact.map(|v| v.to_f64_lossy() + rng.gen_range(-1e-8..1e-8));
    let out = snap_and_refit(&noisy, dims(2, 2, 2), &SnapPlan::default(), &SolverConfig::default()).unwrap();
    let snapped = out.exact.expect("snap succeeds");
    assert_eq!(rank_one_terms(&snapped), rank_one_terms(&exact));
}

#[test]
fn freezing_is_monotone_and_complete_on_success() {
    let d = dims(2, 2, 2);
    let t = matmul_cp::build_matmul_tensor::<f64>(d).unwrap();
    let config = SolverConfig { c: 36.0, restarts: 20, stop_at_first_exact: true, record_trace: false, seed: 3, ..SolverConfig::default() };
    let fit = matmul_cp::multi_restart(&t, 7, &config).unwrap();
    let best = fit.best();
    assert!(best.best_phi <= 1e-16);
    let out = snap_and_refit(&best.factors(), d, &SnapPlan::default(), &config).unwrap();
    assert!(out.frozen_counts.windows(2).all(|w| w[0] < w[1]));
    if out.is_success() {
        assert!(verify_exact(out.exact.as_ref().unwrap(), d).unwrap().is_certified());
    }
}

#[test]
fn t222_sweep_is_exact_above_the_threshold() {
    let spec = SweepSpec {
        dims: dims(2, 2, 2),
        rank: 7,
        c_values: vec![36.0, 60.0, 100.0],
        restarts_per_c: 20,
        solver: SolverConfig { record_trace: false, ..SolverConfig::default() },
        seed: 1,
    };
    let result = cmd_sweep(&spec).unwrap();
    assert_eq!(result.rows.len(), 3);
    assert!(result.rows.iter().all(|r| r.best_phi <= 1e-16), "{}", result.to_csv());
    assert_eq!(classify(&result, &ClassifyConfig::default()), Classification::Exact);
}

#[test]
fn t232_rank10_sweep_looks_like_border_rank() {
    let spec = SweepSpec {
        dims: dims(2, 3, 2),
        rank: 10,
        c_values: vec![1000.0, 3162.0, 10000.0],
        restarts_per_c: 2,
        solver: SolverConfig { max_iters: 5000, record_trace: false, ..SolverConfig::default() },
        seed: 1,
    };
    let result = cmd_sweep(&spec).unwrap();
    let phis: Vec<f64> = result.rows.iter().map(|r| r.best_phi).collect();
    assert!(phis.windows(2).all(|w| w[1] < w[0]), "{}", result.to_csv());
    assert!(phis.iter().all(|&p| p > 1e-16));
    assert!(matches!(classify(&result, &ClassifyConfig::default()), Classification::BorderRankCandidate { .. }));
}
