//! Drivers behind the command-line tool: rank searches, sweeps over the
//! sphere radius, and the decompose → sparsify → rationalize → verify →
//! export pipeline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bilinear::{export_bilinear, BilinearProgram, OpCounts};
use crate::cp::FactorTriple;
use crate::error::{Error, Result};
use crate::io::{trace_csv, write_atomic, FactorFile};
use crate::lm::{multi_restart, solve, MultiRestart, RunOutcome, SolverConfig, Status};
use crate::rationalize::{snap_and_refit, verify_exact, Certificate, SnapPlan, Verification};
use crate::rng::split_seed;
use crate::sparsify::{sparsify_cycle, sparsity_report, PairMode, SparsifyConfig, SparsityReport};
use crate::tensor::{build_matmul_tensor, build_matmul_tensor_capped, MatMulDims, TensorFixture, DEFAULT_ENTRY_CAP};
use crate::BigRational;

/// Ones-list fixture of `T_PQS`.
pub fn cmd_gen_tensor(dims: MatMulDims, cap: usize) -> Result<TensorFixture> {
    TensorFixture::from_tensor(&build_matmul_tensor_capped::<f64>(dims, cap)?)
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub runs: MultiRestart<f64>,
    /// Factor file of the best run, annotated with `φ`, status, seed and `c`.
    pub file: FactorFile,
    /// Trace of the best run.
    pub trace_csv: String,
}

impl Decomposition {
    pub fn best(&self) -> &RunOutcome<f64> {
        self.runs.best()
    }

    pub fn is_exact(&self) -> bool {
        self.best().status == Status::ExactFit
    }
}

fn annotated(dims: MatMulDims, run: &RunOutcome<f64>, c: f64) -> FactorFile {
    let mut file = FactorFile::from_float(dims, &run.factors());
    file.phi = Some(run.best_phi);
    file.status = Some(run.status.as_str().to_string());
    file.seed = Some(run.seed);
    file.c_radius = Some(c);
    file
}

/// Multi-restart search for a rank-`rank` decomposition of `T_PQS`.
pub fn cmd_decompose(dims: MatMulDims, rank: usize, config: &SolverConfig) -> Result<Decomposition> {
    let target = build_matmul_tensor::<f64>(dims)?;
    let runs = multi_restart(&target, rank, config)?;
    let best = runs.best();
    let file = annotated(dims, best, config.c);
    let trace_csv = trace_csv([(best.restart_index, best.trace.as_slice())]);
    Ok(Decomposition { runs, file, trace_csv })
}

/// Evenly spaced points in `log10` from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && per_decade > 0) {
        return Err(Error::InvalidArgument(format!(
            "grid needs 0 < lo <= hi and points per decade, got {lo}, {hi}, {per_decade}"
        )));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let steps = ((b - a) * per_decade as f64).round().max(0.0) as usize;
    if steps == 0 {
        return Ok(vec![lo]);
    }
    Ok((0..=steps)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / steps as f64))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub dims: MatMulDims,
    pub rank: usize,
    pub c_values: Vec<f64>,
    pub restarts_per_c: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.restarts_per_c == 0 {
            return Err(Error::InvalidArgument("rank and restarts must be positive".into()));
        }
        if self.c_values.is_empty() || self.c_values.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument("c values must be positive and finite".into()));
        }
        if self.c_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("c values must be strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: f64,
    pub best_phi: f64,
    pub status: Status,
    pub restarts_used: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// CSV with columns `c,best_phi,status,restarts_used,wall_time`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("c,best_phi,status,restarts_used,wall_time\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{},{},{:.3}",
                r.c,
                r.best_phi,
                r.status.as_str(),
                r.restarts_used,
                r.wall_time
            );
        }
        out
    }
}

/// For each `c`, a multi-restart search seeded by `split_seed(spec.seed, index of c)`;
/// a `c` stops early at its first exact fit.
pub fn cmd_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let target = build_matmul_tensor::<f64>(spec.dims)?;
    let mut rows = Vec::with_capacity(spec.c_values.len());
    for (i, &c) in spec.c_values.iter().enumerate() {
        let mut config = spec.solver.clone();
        config.c = c;
        config.restarts = spec.restarts_per_c;
        config.seed = split_seed(spec.seed, i as u64);
        config.record_trace = false;
        config.stop_at_first_exact = true;
        let start = Instant::now();
        let runs = multi_restart(&target, spec.rank, &config)?;
        let best = runs.best();
        rows.push(SweepRow {
            c,
            best_phi: best.best_phi,
            status: best.status,
            restarts_used: runs.outcomes.len(),
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(SweepResult { rows })
}

/// Thresholds for reading a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    /// Largest `d log φ / d log c` over the top half counted as decreasing to zero.
    pub max_slope: f64,
    /// Largest `max φ / min φ` over the top half counted as a floor.
    pub floor_ratio: f64,
    pub exact_phi: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            max_slope: -0.5,
            floor_ratio: 10.0,
            exact_phi: 1e-16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    /// Every `c` in the top half reached an exact fit.
    Exact,
    BorderRankCandidate { slope: f64 },
    Floor { ratio: f64, level: f64 },
    Inconclusive { slope: f64, ratio: f64 },
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Exact => "exact",
            Classification::BorderRankCandidate { .. } => "border-rank candidate",
            Classification::Floor { .. } => "floor",
            Classification::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Reads the top half of the `c` values (at least two points when available).
pub fn classify(result: &SweepResult, cfg: &ClassifyConfig) -> Classification {
    let n = result.rows.len();
    let top = &result.rows[n - (n / 2).max(2).min(n)..];
    if top.iter().all(|r| r.best_phi <= cfg.exact_phi) {
        return Classification::Exact;
    }
    let x: Vec<f64> = top.iter().map(|r| r.c.ln()).collect();
    let y: Vec<f64> = top.iter().map(|r| r.best_phi.max(f64::MIN_POSITIVE).ln()).collect();
    let s = if top.len() >= 2 { slope(&x, &y) } else { 0.0 };
    let (lo, hi) = top
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.best_phi), hi.max(r.best_phi)));
    let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if top.len() >= 2 && s <= cfg.max_slope {
        Classification::BorderRankCandidate { slope: s }
    } else if ratio < cfg.floor_ratio {
        Classification::Floor { ratio, level: lo }
    } else {
        Classification::Inconclusive { slope: s, ratio }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub sparsify: SparsifyConfig,
    pub snap: SnapPlan,
    /// For non-cubic dims in automatic pair mode, retry a failed snap after
    /// three-sided sparsification.
    pub three_sided_fallback: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            sparsify: SparsifyConfig::default(),
            snap: SnapPlan::default(),
            three_sided_fallback: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decompose,
    Sparsify,
    Rationalize,
    Verify,
    Export,
}

/// What happened to one exact-fit candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateAttempt {
    pub restart: usize,
    pub phi: f64,
    pub l1_before: f64,
    pub sparsity: SparsityReport,
    pub pair_mode: PairMode,
    pub snapped: bool,
    pub refits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub dims: MatMulDims,
    pub rank: usize,
    pub seed: u64,
    pub success: bool,
    pub failed_stage: Option<Stage>,
    pub message: String,
    pub restarts_run: usize,
    pub best_phi: f64,
    pub attempts: Vec<CandidateAttempt>,
    pub certificate: Option<Certificate>,
    pub counts: Option<OpCounts>,
    /// Artifact file names inside the output directory.
    pub artifacts: Vec<String>,
}

/// Result of [`cmd_pipeline`]: the report plus the program on success.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub program: Option<BilinearProgram>,
}

struct Artifacts<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl Artifacts<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        if !self.names.iter().any(|n| n == name) {
            self.names.push(name.to_string());
        }
        Ok(path)
    }
}

/// Runs restarts `0, 1, …` of the solver and carries every exact fit
/// through sparsification and snapping until one verifies. Stage artifacts
/// are written to `out_dir`; the report names the stage where a run stopped.
pub fn cmd_pipeline(dims: MatMulDims, rank: usize, config: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    config.solver.validate()?;
    config.snap.validate()?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let target = build_matmul_tensor::<f64>(dims)?;
    let mut art = Artifacts {
        dir: out_dir,
        names: Vec::new(),
    };
    let start = Instant::now();
    let budget = config.solver.budget_secs;
    let mut report = PipelineReport {
        dims,
        rank,
        seed: config.solver.seed,
        success: false,
        failed_stage: None,
        message: String::new(),
        restarts_run: 0,
        best_phi: f64::INFINITY,
        attempts: Vec::new(),
        certificate: None,
        counts: None,
        artifacts: Vec::new(),
    };
    let mut best_effort: Option<RunOutcome<f64>> = None;
    let mut program = None;

    for i in 0..config.solver.restarts {
        if budget.is_some_and(|b| start.elapsed().as_secs_f64() >= b) {
            break;
        }
        let mut solver = config.solver.clone();
        solver.seed = split_seed(config.solver.seed, i as u64);
        let mut run = solve(&target, rank, &solver, None)?;
        run.restart_index = i;
        report.restarts_run = i + 1;
        report.best_phi = report.best_phi.min(run.best_phi);
        if run.status != Status::ExactFit {
            if best_effort.as_ref().map_or(true, |b| run.best_phi < b.best_phi) {
                best_effort = Some(run);
            }
            continue;
        }
        art.put("decompose.json", annotated(dims, &run, solver.c).to_json()?.as_bytes())?;
        art.put("decompose_trace.csv", trace_csv([(i, run.trace.as_slice())]).as_bytes())?;
        let fitted = run.factors();

        let mut modes = vec![config.sparsify.pair_mode];
        if config.three_sided_fallback && config.sparsify.pair_mode == PairMode::Auto && !dims.is_cubic() {
            modes.push(PairMode::ThreeSided);
        }
        for mode in modes {
            let sp_config = SparsifyConfig {
                pair_mode: mode,
                seed: split_seed(config.sparsify.seed, i as u64),
                ..config.sparsify.clone()
            };
            let sparse = sparsify_cycle(&fitted, dims, &sp_config)?;
            let sparsity = sparsity_report(&sparse.factors);
            art.put("sparsify.json", FactorFile::from_float(dims, &sparse.factors).to_json()?.as_bytes())?;
            art.put("sparsity.json", (serde_json::to_string_pretty(&sparsity)? + "\n").as_bytes())?;
            let snap = snap_and_refit(&sparse.factors, dims, &config.snap, &config.solver)?;
            report.attempts.push(CandidateAttempt {
                restart: i,
                phi: run.best_phi,
                l1_before: fitted.l1_norm(),
                sparsity,
                pair_mode: mode,
                snapped: snap.is_success(),
                refits: snap.refits,
            });
            if let Some(exact) = snap.exact {
                art.put("rationalize.json", FactorFile::from_exact(dims, &exact).to_json()?.as_bytes())?;
                program = finish(dims, &mut art, &mut report)?;
                break;
            }
            art.put("rationalize_partial.json", FactorFile::from_float(dims, &snap.partial()).to_json()?.as_bytes())?;
        }
        if program.is_some() || report.failed_stage.is_some() {
            break;
        }
    }

    if program.is_none() && report.failed_stage.is_none() {
        if report.attempts.is_empty() {
            report.failed_stage = Some(Stage::Decompose);
            report.message = format!(
                "no exact fit in {} restarts (best phi {:e})",
                report.restarts_run, report.best_phi
            );
            if let Some(run) = &best_effort {
                art.put("decompose.json", annotated(dims, run, config.solver.c).to_json()?.as_bytes())?;
            }
        } else {
            report.failed_stage = Some(Stage::Rationalize);
            report.message = format!("none of {} exact-fit candidates snapped to small rationals", report.attempts.len());
        }
    }
    report.success = program.is_some();
    report.artifacts = art.names.clone();
    report.artifacts.push("report.json".into());
    art.put("report.json", (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    Ok(PipelineOutcome { report, program })
}

/// Verify and export stages, reading the rationalized factors back from disk.
fn finish(dims: MatMulDims, art: &mut Artifacts<'_>, report: &mut PipelineReport) -> Result<Option<BilinearProgram>> {
    let exact = FactorFile::load(&art.dir.join("rationalize.json"))?.to_exact()?;
    match verify_exact(&exact, dims)? {
        Verification::Certified(cert) => {
            art.put("certificate.json", (serde_json::to_string_pretty(&cert)? + "\n").as_bytes())?;
            report.certificate = Some(cert);
        }
        Verification::Counterexample { index, .. } => {
            report.failed_stage = Some(Stage::Verify);
            report.message = format!("reloaded factors fail at tensor index {index:?}");
            return Ok(None);
        }
    }
    let program = match export_bilinear(&exact, dims) {
        Ok(p) => p,
        Err(e) => {
            report.failed_stage = Some(Stage::Export);
            report.message = e.to_string();
            return Ok(None);
        }
    };
    art.put("program.json", (serde_json::to_string_pretty(&program)? + "\n").as_bytes())?;
    art.put("program.txt", program.to_text().as_bytes())?;
    art.put("program_pseudocode.txt", program.to_pseudocode().as_bytes())?;
    report.counts = Some(program.counts());
    report.message = format!("verified {}-multiplication program", program.rank());
    Ok(Some(program))
}

/// Result of checking a factor file.
#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub verification: Verification,
    /// Plain-text listing when certified.
    pub listing: Option<String>,
}

/// Exact check of a factor file; `dims` overrides the file's own when given.
pub fn cmd_verify(file: &FactorFile, dims: Option<MatMulDims>) -> Result<VerifyOutcome> {
    let dims = dims.unwrap_or(file.dims);
    if dims != file.dims {
        return Err(Error::Shape(format!("file is for dims {}, asked to verify {dims}", file.dims)));
    }
    let exact: FactorTriple<BigRational> = file.to_exact()?;
    let verification = verify_exact(&exact, dims)?;
    let listing = if verification.is_certified() {
        Some(export_bilinear(&exact, dims)?.to_text())
    } else {
        None
    };
    Ok(VerifyOutcome { verification, listing })
}

/// Default entry cap for generated fixtures.
pub const GEN_TENSOR_CAP: usize = DEFAULT_ENTRY_CAP;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn d(p: usize, q: usize, s: usize) -> MatMulDims {
        MatMulDims::new(p, q, s).unwrap()
    }

    #[test]
    fn gen_tensor_counts() {
        assert_eq!(cmd_gen_tensor(d(2, 2, 2), GEN_TENSOR_CAP).unwrap(), fixtures::t222_ones());
        assert_eq!(cmd_gen_tensor(d(1, 1, 1), GEN_TENSOR_CAP).unwrap().ones.len(), 1);
        assert_eq!(cmd_gen_tensor(d(3, 4, 3), GEN_TENSOR_CAP).unwrap().ones.len(), 36);
        assert!(matches!(cmd_gen_tensor(d(3, 4, 3), 100), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn grid_has_sixteen_per_decade() {
        let g = geometric_grid(10.0, 1e4, 16).unwrap();
        assert_eq!(g.len(), 49);
        assert!((g[16] - 100.0).abs() < 1e-9);
        assert!((g[48] - 1e4).abs() < 1e-6);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(geometric_grid(0.0, 1.0, 16).is_err());
    }

    fn rows(cs: &[f64], phis: &[f64]) -> SweepResult {
        SweepResult {
            rows: cs
                .iter()
                .zip(phis)
                .map(|(&c, &best_phi)| SweepRow {
                    c,
                    best_phi,
                    status: if best_phi <= 1e-16 { Status::ExactFit } else { Status::Stationary },
                    restarts_used: 1,
                    wall_time: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn classification_rules() {
        let cs = [10.0, 100.0, 1e3, 1e4];
        let cfg = ClassifyConfig::default();
        assert_eq!(classify(&rows(&cs, &[1e-3, 1e-20, 1e-20, 1e-18]), &cfg), Classification::Exact);
        let border = classify(&rows(&cs, &[1e-2, 1e-3, 1e-4, 1e-5]), &cfg);
        assert!(matches!(border, Classification::BorderRankCandidate { slope } if (slope + 1.0).abs() < 1e-9));
        assert_eq!(classify(&rows(&cs, &[0.1, 0.05, 0.04, 0.04]), &cfg).label(), "floor");
        assert_eq!(classify(&rows(&cs, &[0.1, 0.05, 1e-3, 0.5]), &cfg).label(), "inconclusive");
    }

    #[test]
    fn sweep_csv_layout() {
        let csv = rows(&[1.0, 2.0], &[0.5, 1e-20]).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "c,best_phi,status,restarts_used,wall_time");
        assert_eq!(lines[2], "2,1e-20,exact_fit,1,0.000");
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let spec = SweepSpec {
            dims: d(1, 1, 1),
            rank: 1,
            c_values: vec![2.0, 1.0],
            restarts_per_c: 1,
            solver: SolverConfig::default(),
            seed: 0,
        };
        assert!(cmd_sweep(&spec).is_err());
    }

    #[test]
    fn verify_shipped_files() {
        for name in ["strassen", "t332_r15"] {
            let file = fixtures::shipped_factor_file(name).unwrap();
            let out = cmd_verify(&file, None).unwrap();
            assert!(out.verification.is_certified());
            assert!(out.listing.unwrap().starts_with("m1 = "));
        }
    }
}
