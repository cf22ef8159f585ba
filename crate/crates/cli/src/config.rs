//! TOML configuration merged with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use matmul_cp::experiment::{ClassifyConfig, PipelineConfig};
use matmul_cp::rationalize::SnapPlan;
use matmul_cp::sparsify::SparsifyConfig;
use matmul_cp::{MatMulDims, SolverConfig};

use crate::Common;

/// Missing or inconsistent arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DimsEntry {
    List(MatMulDims),
    Text(String),
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub per_decade: Option<usize>,
    pub c_values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dims: Option<DimsEntry>,
    pub rank: Option<usize>,
    pub c: Option<f64>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub budget: Option<f64>,
    pub solver: Option<SolverConfig>,
    pub sparsify: Option<SparsifyConfig>,
    #[serde(default)]
    pub snap: SnapPlan,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub classify: ClassifyConfig,
    /// Whether the `[solver]` table sets `c` itself.
    #[serde(skip)]
    pub solver_sets_c: bool,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let usage = |e: toml::de::Error| UsageError(format!("config {}: {e}", path.display()));
        let table: toml::Table = toml::from_str(&text).map_err(usage)?;
        let solver_sets_c = table
            .get("solver")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("c"));
        let mut cfg: Self = table.try_into().map_err(usage)?;
        cfg.solver_sets_c = solver_sets_c;
        Ok(cfg)
    }
}

/// Flags layered over the file.
pub struct Resolved {
    pub file: FileConfig,
    pub dims: Option<MatMulDims>,
    pub rank: Option<usize>,
    pub c: Option<f64>,
    pub restarts: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub budget: Option<f64>,
    dims_error: Option<String>,
}

impl Resolved {
    pub fn new(file: FileConfig, flags: &Common) -> Self {
        let mut dims_error = None;
        let file_dims = match &file.dims {
            Some(DimsEntry::List(d)) => Some(*d),
            Some(DimsEntry::Text(s)) => match s.parse::<MatMulDims>() {
                Ok(d) => Some(d),
                Err(e) => {
                    dims_error = Some(format!("config dims {s:?}: {e}"));
                    None
                }
            },
            None => None,
        };
        let solver_seed = file.solver.as_ref().map(|s| s.seed);
        Self {
            dims: flags.dims.or(file_dims),
            rank: flags.rank.or(file.rank),
            c: flags.c.or(file.c),
            restarts: flags.restarts.or(file.restarts),
            seed: flags.seed.or(file.seed).or(solver_seed).unwrap_or(0),
            out: flags.out.clone().or_else(|| file.out.clone()),
            budget: flags.budget.or(file.budget),
            dims_error: if flags.dims.is_some() { None } else { dims_error },
            file,
        }
    }

    pub fn dims(&self) -> Result<MatMulDims> {
        if let Some(e) = &self.dims_error {
            return Err(UsageError(e.clone()).into());
        }
        self.dims.ok_or_else(|| UsageError("--dims is required".into()).into())
    }

    pub fn rank(&self) -> Result<usize> {
        match self.rank {
            Some(0) => Err(UsageError("--rank must be at least 1".into()).into()),
            Some(r) => Ok(r),
            None => Err(UsageError("--rank is required".into()).into()),
        }
    }

    /// Solver settings: file `[solver]` table, then top-level keys and flags.
    /// Unless set somewhere, the radius is `⌈6.5·rank⌉`. Without a `[solver]`
    /// table searches run up to 20 restarts, stopping at the first exact fit.
    pub fn solver(&self, rank: usize) -> SolverConfig {
        let mut s = self.file.solver.clone().unwrap_or_else(|| SolverConfig {
            restarts: 20,
            stop_at_first_exact: true,
            ..SolverConfig::default()
        });
        s.c = match self.c {
            Some(c) => c,
            None if self.file.solver_sets_c => s.c,
            None => SolverConfig::default_c(rank),
        };
        if let Some(n) = self.restarts {
            s.restarts = n;
        }
        s.seed = self.seed;
        if self.budget.is_some() {
            s.budget_secs = self.budget;
        }
        s
    }

    /// Solver settings for sweeps: without a `[solver]` table each descent
    /// gets 5000 iterations, since near-degenerate fits at large `c` converge slowly.
    pub fn sweep_solver(&self, rank: usize) -> SolverConfig {
        let mut s = self.solver(rank);
        if self.file.solver.is_none() {
            s.max_iters = 5000;
            s.record_trace = false;
        }
        s
    }

    pub fn sparsify(&self) -> SparsifyConfig {
        let mut s = self.file.sparsify.clone().unwrap_or_default();
        s.seed = self.seed;
        s
    }

    pub fn pipeline(&self, rank: usize) -> PipelineConfig {
        let mut solver = self.solver(rank);
        if self.restarts.is_none() && self.file.solver.is_none() {
            solver.restarts = 100;
        }
        PipelineConfig {
            solver,
            sparsify: self.sparsify(),
            snap: self.file.snap.clone(),
            ..PipelineConfig::default()
        }
    }
}
