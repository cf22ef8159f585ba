//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always print. Criterion 9
//! is the extended negative-evidence run (about two hours on one core); it
//! runs only with `MMCP_EXTENDED=1` and is otherwise reported as skipped.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use matmul_cp::bilinear::{export_bilinear, run_bilinear};
use matmul_cp::cp::{jacobian, ParamVector};
use matmul_cp::experiment::{cmd_pipeline, PipelineConfig};
use matmul_cp::io::FactorFile;
use matmul_cp::lm::{constrained_step, multi_restart, SolverConfig, Status, StepVariant};
use matmul_cp::rationalize::{snap_and_refit, verify_exact, SnapPlan};
use matmul_cp::sparsify::{sparsify_cycle, SparsifyConfig};
use matmul_cp::rng::split_seed;
use matmul_cp::{
    apply_bilinear, build_matmul_tensor, compose, fixtures, residual_cost, solve, BigRational, FactorTriple,
    MatMulDims, Matrix, Scalar,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seed for every stochastic criterion.
const SEED: u64 = 1;

type Outcome = Result<String, String>;

fn dims(p: usize, q: usize, s: usize) -> MatMulDims {
    MatMulDims::new(p, q, s).unwrap()
}

fn int_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<BigRational> {
    Matrix::from_fn(rows, cols, |_, _| BigRational::from_integer(rng.gen_range(-9i64..=9).into()))
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_tensor_fixture() -> Outcome {
    let t = build_matmul_tensor::<f64>(dims(2, 2, 2)).map_err(|e| e.to_string())?;
    let expected = fixtures::t222_ones().to_tensor::<f64>().map_err(|e| e.to_string())?;
    ensure(t == expected, "T_222 differs from the reference slices")?;
    ensure(t.sum() == 8.0, format!("{} ones", t.sum()))?;
    Ok("8 ones at the reference positions".into())
}

fn c2_definitional() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let cases = [(1, 1, 1), (2, 2, 2), (2, 3, 2), (3, 2, 2), (3, 3, 2), (3, 3, 3), (3, 4, 3)];
    for (p, q, s) in cases {
        let t = build_matmul_tensor::<BigRational>(dims(p, q, s)).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let e = int_matrix(&mut rng, p, q);
            let f = int_matrix(&mut rng, q, s);
            let got = apply_bilinear(&t, &e, &f).map_err(|e| e.to_string())?;
            let want = e.matmul(&f).unwrap().vec_col_major();
            ensure(got == want, format!("mismatch for dims {p},{q},{s}"))?;
        }
    }
    Ok("700 exact integer checks".into())
}

fn c3_golden() -> Outcome {
    let s = verify_exact(&fixtures::strassen(), dims(2, 2, 2)).map_err(|e| e.to_string())?;
    let t = verify_exact(&fixtures::t332_rank15(), dims(3, 3, 2)).map_err(|e| e.to_string())?;
    ensure(s.is_certified(), format!("strassen: {s:?}"))?;
    ensure(t.is_certified(), format!("rank-15 T_332: {t:?}"))?;
    Ok("both shipped triples certified".into())
}

fn c4_bilinear_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for (f, d, r) in [(fixtures::t332_rank15(), dims(3, 3, 2), 15), (fixtures::strassen(), dims(2, 2, 2), 7)] {
        let prog = export_bilinear(&f, d).map_err(|e| e.to_string())?;
        for _ in 0..200 {
            let e = int_matrix(&mut rng, d.p(), d.q());
            let g = int_matrix(&mut rng, d.q(), d.s());
            let run = run_bilinear(&prog, &e, &g).map_err(|e| e.to_string())?;
            ensure(run.products == r, format!("{} products for {d}", run.products))?;
            ensure(run.g == e.matmul(&g).unwrap(), format!("wrong product for {d}"))?;
        }
    }
    Ok("15 and 7 products, 400 exact checks".into())
}

fn c5_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, (d, rank)) in [(dims(2, 2, 2), 7), (dims(2, 3, 2), 10), (dims(3, 3, 2), 15)].into_iter().enumerate() {
        for _ in 0..if k < 2 { 7 } else { 6 } {
            let sizes = d.mode_sizes();
            let n = (sizes[0] + sizes[1] + sizes[2]) * rank;
            let theta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let f = FactorTriple::from_theta(&theta, sizes, rank).unwrap();
            let j = jacobian(&f, sizes).map_err(|e| e.to_string())?;
            for col in 0..n {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[col] += h;
                minus[col] -= h;
                let tp = compose(&FactorTriple::from_theta(&plus, sizes, rank).unwrap());
                let tm = compose(&FactorTriple::from_theta(&minus, sizes, rank).unwrap());
                for row in 0..j.rows() {
                    let fd = (tp.values()[row] - tm.values()[row]) / (2.0 * h);
                    let a = j[(row, col)];
                    worst = worst.max((a - fd).abs() / a.abs().max(1.0));
                }
            }
        }
    }
    ensure(worst <= 1e-5, format!("max relative error {worst:e}"))?;
    Ok(format!("20 instances, max relative error {worst:.1e}"))
}

fn c6_step_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut tan, mut rad) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(2..40);
        let m = Matrix::from_fn(n + 3, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = m.transpose().matmul(&m).unwrap();
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let theta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let c: f64 = theta.iter().map(|v| v * v).sum();
        let mu = 10f64.powf(rng.gen_range(-3.0..1.0));
        let p = ParamVector::new(theta.clone(), vec![true; n], [n, 0, 0], 1).unwrap();
        let step = constrained_step(&p, &g, &h, mu, c, StepVariant::Tangent).map_err(|e| e.to_string())?;
        let dot: f64 = theta.iter().zip(&step.delta).map(|(a, b)| a * b).sum();
        let dn = step.delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dn > 0.0 {
            tan = tan.max(dot.abs() / (c.sqrt() * dn));
        }
        let after: f64 = step.candidate.iter().map(|v| v * v).sum();
        rad = rad.max((after - c).abs() / c);
    }
    ensure(tan <= 1e-8, format!("tangency {tan:e}"))?;
    ensure(rad <= 1e-10, format!("radius {rad:e}"))?;
    Ok(format!("100 instances, tangency {tan:.1e}, radius {rad:.1e}"))
}

/// First exact fit of T_222 at rank 7, then snapped; returns both factor files.
fn t222_search() -> Result<(String, String, usize), String> {
    let d = dims(2, 2, 2);
    let t = build_matmul_tensor::<f64>(d).unwrap();
    let config = SolverConfig {
        c: 36.0,
        restarts: 100,
        seed: SEED,
        stop_at_first_exact: true,
        record_trace: false,
        ..SolverConfig::default()
    };
    let runs = multi_restart(&t, 7, &config).map_err(|e| e.to_string())?;
    let best = runs.best();
    ensure(best.status == Status::ExactFit && best.best_phi <= 1e-16, format!("best phi {:e}", best.best_phi))?;
    let mut fit = FactorFile::from_float(d, &best.factors());
    fit.phi = Some(best.best_phi);
    fit.seed = Some(best.seed);
    let snap = snap_and_refit(&best.factors(), d, &SnapPlan::default(), &config).map_err(|e| e.to_string())?;
    let exact = snap.exact.ok_or("snapping did not reach a verified triple")?;
    ensure(verify_exact(&exact, d).unwrap().is_certified(), "snapped triple not certified")?;
    Ok((
        fit.to_json().unwrap(),
        FactorFile::from_exact(d, &exact).to_json().unwrap(),
        runs.outcomes.len(),
    ))
}

fn c7_t222_search() -> Outcome {
    let (_, _, used) = t222_search()?;
    Ok(format!("exact fit after {used} restart(s), snapped and certified"))
}

fn c8_t332_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = PipelineConfig::default();
    config.solver.c = 98.0;
    config.solver.restarts = 2000;
    config.solver.seed = SEED;
    config.solver.budget_secs = Some(7200.0);
    config.sparsify.seed = SEED;
    let out = cmd_pipeline(dims(3, 3, 2), 15, &config, dir.path()).map_err(|e| e.to_string())?;
    if let Some(prog) = out.program {
        ensure(prog.rank() == 15, format!("{} products", prog.rank()))?;
        let reloaded = FactorFile::load(&dir.path().join("rationalize.json")).map_err(|e| e.to_string())?;
        let exact = reloaded.to_exact().map_err(|e| e.to_string())?;
        ensure(verify_exact(&exact, dims(3, 3, 2)).unwrap().is_certified(), "artifact does not re-verify")?;
        return Ok(format!("verified 15-product program after {} restarts", out.report.restarts_run));
    }
    // Fallback: recover from the shipped triple perturbed by 1e-4.
    let d = dims(3, 3, 2);
    let t = build_matmul_tensor::<f64>(d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let noisy = fixtures::t332_rank15().map(|v| v.to_f64_lossy() + 1e-4 * rng.gen_range(-1.0..1.0));
    let p = ParamVector::from_factors(&noisy);
    let solver = SolverConfig {
        c: p.norm_sq(),
        ..SolverConfig::default()
    };
    let refit = solve(&t, 15, &solver, Some(p)).map_err(|e| e.to_string())?;
    let snap = snap_and_refit(&refit.factors(), d, &SnapPlan::default(), &solver).map_err(|e| e.to_string())?;
    ensure(snap.is_success(), format!("search missed ({}) and fallback failed", out.report.message))?;
    Ok(format!("search missed ({}); fallback from perturbed triple verified", out.report.message))
}

fn c9_negative_evidence() -> Outcome {
    let d = dims(3, 3, 3);
    let t = build_matmul_tensor::<f64>(d).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    let runs: [(usize, f64, u64); 4] = [(20, 1e2, 0), (20, 1e3, 1), (20, 1e4, 2), (22, 594.0, 3)];
    for (rank, c, k) in runs {
        let config = SolverConfig {
            c,
            restarts: 100,
            seed: split_seed(SEED, k),
            record_trace: false,
            budget_secs: Some(if rank == 22 { 2400.0 } else { 1500.0 }),
            ..SolverConfig::default()
        };
        let res = multi_restart(&t, rank, &config).map_err(|e| e.to_string())?;
        let best = res.best();
        ok &= best.best_phi > 1e-6;
        lines.push(format!(
            "R={rank} c={c}: best phi {:.3e} over {} restarts ({:.0}s)",
            best.best_phi,
            res.outcomes.len(),
            res.elapsed.as_secs_f64()
        ));
    }
    let summary = lines.join("; ");
    ensure(ok, format!("a floor was broken, investigate: {summary}"))?;
    Ok(summary)
}

fn c10_sparsifier() -> Outcome {
    let d = dims(2, 2, 2);
    let t = build_matmul_tensor::<f64>(d).unwrap();
    let (mut found, mut improved, mut i) = (0, 0, 0u64);
    let mut worst_drift = 0.0f64;
    while found < 20 {
        ensure(i < 200, format!("only {found} exact fits in 200 runs"))?;
        let config = SolverConfig {
            c: 36.0,
            seed: split_seed(SEED, 1000 + i),
            record_trace: false,
            ..SolverConfig::default()
        };
        i += 1;
        let run = solve(&t, 7, &config, None).map_err(|e| e.to_string())?;
        if run.status != Status::ExactFit {
            continue;
        }
        found += 1;
        let f = run.factors();
        let out = sparsify_cycle(&f, d, &SparsifyConfig { seed: SEED, ..Default::default() }).map_err(|e| e.to_string())?;
        let drift = compose(&out.factors).distance_sq(&compose(&f)).unwrap().sqrt();
        worst_drift = worst_drift.max(drift);
        ensure(drift <= 1e-8, format!("reconstruction moved by {drift:e}"))?;
        ensure(
            out.l1_history.windows(2).all(|w| w[1] <= w[0]) && out.factors.l1_norm() <= f.l1_norm(),
            "L1 increased",
        )?;
        ensure(residual_cost(&out.factors, &t).unwrap() <= 1e-12, "no longer an exact fit")?;
        if out.factors.l1_norm() < f.l1_norm() {
            improved += 1;
        }
    }
    Ok(format!("20 fits, L1 strictly reduced in {improved}, max drift {worst_drift:.1e}"))
}

fn c11_determinism() -> Outcome {
    let a = t222_search()?;
    let b = t222_search()?;
    ensure(a.0 == b.0, "fitted factor JSON differs between runs")?;
    ensure(a.1 == b.1, "snapped factor JSON differs between runs")?;
    Ok("identical fitted and snapped factor JSON".into())
}

fn main() -> ExitCode {
    let extended = std::env::var("MMCP_EXTENDED").is_ok_and(|v| v == "1");
    let criteria: Vec<(u32, &str, fn() -> Outcome, Option<Duration>)> = vec![
        (1, "tensor fixture", c1_tensor_fixture, Some(Duration::from_secs(1))),
        (2, "definitional property", c2_definitional, Some(Duration::from_secs(10))),
        (3, "golden verification", c3_golden, Some(Duration::from_secs(5))),
        (4, "bilinear oracle", c4_bilinear_oracle, None),
        (5, "gradient correctness", c5_gradient, Some(Duration::from_secs(30))),
        (6, "constrained-step geometry", c6_step_geometry, Some(Duration::from_secs(10))),
        (7, "T_222 exact-fit search", c7_t222_search, Some(Duration::from_secs(600))),
        (8, "T_332 pipeline", c8_t332_pipeline, Some(Duration::from_secs(7200))),
        (9, "T_333 negative evidence [extended]", c9_negative_evidence, Some(Duration::from_secs(7200))),
        (10, "sparsifier invariance", c10_sparsifier, Some(Duration::from_secs(600))),
        (11, "determinism", c11_determinism, None),
    ];
    let mut failed = 0;
    println!("acceptance seed {SEED}");
    for (n, name, run, budget) in criteria {
        if n == 9 && !extended {
            println!("criterion {n:>2} {name}: SKIPPED (extended; set MMCP_EXTENDED=1)");
            continue;
        }
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let result = match (result, budget) {
            (Ok(msg), Some(b)) if took > b => Err(format!("{msg}, but took {took:.1?} > {b:?}")),
            (r, _) => r,
        };
        match result {
            Ok(msg) => println!("criterion {n:>2} {name}: PASS ({msg}; {took:.2?})"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({msg}; {took:.2?})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
