//! `mmcp`: rank searches, sweeps and verified algorithm export for
//! matrix-multiplication tensors.
//!
//! Exit codes: 0 success or certificate, 1 runtime failure, 2 best effort
//! (no exact fit or no verified program), 3 verification counterexample,
//! 4 usage error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use matmul_cp::experiment::{
    classify, cmd_decompose, cmd_gen_tensor, cmd_pipeline, cmd_sweep, cmd_verify, geometric_grid, SweepSpec,
    GEN_TENSOR_CAP,
};
use matmul_cp::fixtures::{reference_case, shipped_factor_file};
use matmul_cp::io::{write_atomic, FactorFile};
use matmul_cp::rationalize::{snap_and_refit, Verification};
use matmul_cp::sparsify::{sparsify_cycle, sparsity_report};
use matmul_cp::{bilinear::export_bilinear, Error, MatMulDims};

use config::{FileConfig, Resolved};

const EXIT_BEST_EFFORT: u8 = 2;
const EXIT_COUNTEREXAMPLE: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "mmcp", version, about = "CP decompositions of matrix-multiplication tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Tensor dims as P,Q,S.
    #[arg(long)]
    pub dims: Option<MatMulDims>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Squared sphere radius `‖θ‖² = c`.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub budget: Option<f64>,
    /// TOML file with the same keys plus `[solver]`, `[sparsify]`, `[snap]`,
    /// `[sweep]` and `[classify]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the ones-list fixture of T_PQS.
    GenTensor {
        #[command(flatten)]
        common: Common,
    },
    /// Multi-restart search for an exact decomposition.
    Decompose {
        #[command(flatten)]
        common: Common,
    },
    /// Best residual over a grid of c values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        c_min: Option<f64>,
        #[arg(long)]
        c_max: Option<f64>,
        #[arg(long)]
        per_decade: Option<usize>,
        /// Explicit comma-separated c values (overrides the grid).
        #[arg(long, value_delimiter = ',')]
        c_values: Option<Vec<f64>>,
    },
    /// Decompose, sparsify, rationalize, verify and export.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Minimize the L1 norm of an exact float decomposition.
    Sparsify {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Snap an exact float decomposition to small rationals and verify it.
    Rationalize {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Exact check of a factor file (or a shipped fixture) and its algorithm listing.
    Verify {
        /// Factor file path, or `strassen` / `t332_r15` for the shipped fixtures.
        input: String,
        #[command(flatten)]
        common: Common,
    },
    /// Render a verified factor file as an algorithm.
    Export {
        input: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Text,
    Pseudocode,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<config::UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_) | Error::Parse(_) | Error::Shape(_) | Error::TooLarge { .. }) => EXIT_USAGE,
        Some(Error::Unverified { .. }) => EXIT_COUNTEREXAMPLE,
        _ => 1,
    }
}

fn resolve(common: &Common) -> Result<Resolved> {
    let file = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Ok(Resolved::new(file, common))
}

/// Writes `text` to `out`, or prints it when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_factor_file(input: &str) -> Result<FactorFile> {
    let path = Path::new(input);
    if !path.exists() {
        return shipped_factor_file(input)
            .map_err(|_| config::UsageError(format!("{input}: no such file or shipped fixture")).into());
    }
    Ok(FactorFile::load(path).with_context(|| format!("reading {input}"))?)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::GenTensor { common } => {
            let r = resolve(&common)?;
            let fixture = cmd_gen_tensor(r.dims()?, GEN_TENSOR_CAP)?;
            emit(r.out.as_deref(), &(serde_json::to_string_pretty(&fixture)? + "\n"))?;
            Ok(0)
        }
        Command::Decompose { common } => {
            let r = resolve(&common)?;
            let (dims, rank) = (r.dims()?, r.rank()?);
            let solver = r.solver(rank);
            let dec = cmd_decompose(dims, rank, &solver)?;
            let best = dec.best();
            eprintln!(
                "{dims} rank {rank} c {}: {} phi {:e} (restart {}, {} runs, {:.1}s)",
                solver.c,
                best.status.as_str(),
                best.best_phi,
                best.restart_index,
                dec.runs.outcomes.len(),
                dec.runs.elapsed.as_secs_f64()
            );
            if let Some(out) = &r.out {
                write_atomic(out, dec.file.to_json()?.as_bytes())?;
                write_atomic(&sibling(out, "_trace.csv"), dec.trace_csv.as_bytes())?;
            } else {
                print!("{}", dec.file.to_json()?);
            }
            Ok(if dec.is_exact() { 0 } else { EXIT_BEST_EFFORT })
        }
        Command::Sweep {
            common,
            c_min,
            c_max,
            per_decade,
            c_values,
        } => {
            let r = resolve(&common)?;
            let (dims, rank) = (r.dims()?, r.rank()?);
            let sweep = &r.file.sweep;
            let c_values = match c_values.or_else(|| sweep.c_values.clone()) {
                Some(v) => v,
                None => geometric_grid(
                    c_min.or(sweep.c_min).unwrap_or(10.0),
                    c_max.or(sweep.c_max).unwrap_or(1e4),
                    per_decade.or(sweep.per_decade).unwrap_or(16),
                )?,
            };
            let spec = SweepSpec {
                dims,
                rank,
                c_values,
                restarts_per_c: r.restarts.unwrap_or(10),
                solver: r.sweep_solver(rank),
                seed: r.seed,
            };
            let result = cmd_sweep(&spec)?;
            emit(r.out.as_deref(), &result.to_csv())?;
            let class = classify(&result, &r.file.classify);
            eprintln!("classification: {} ({class:?})", class.label());
            if let Some(case) = reference_case(dims) {
                eprintln!(
                    "reference: {} rank {} border rank {}",
                    case.label, case.rank, case.border_rank
                );
            }
            Ok(0)
        }
        Command::Pipeline { common } => {
            let r = resolve(&common)?;
            let (dims, rank) = (r.dims()?, r.rank()?);
            let config = r.pipeline(rank);
            let dir = r.out.clone().unwrap_or_else(|| PathBuf::from(format!("pipeline_{}_r{rank}", dims.label())));
            let outcome = cmd_pipeline(dims, rank, &config, &dir)?;
            let rep = &outcome.report;
            eprintln!("{} ({} restarts, artifacts in {})", rep.message, rep.restarts_run, dir.display());
            if let Some(prog) = &outcome.program {
                print!("{}", prog.to_text());
                Ok(0)
            } else {
                eprintln!("stopped at stage {:?}", rep.failed_stage);
                Ok(EXIT_BEST_EFFORT)
            }
        }
        Command::Sparsify { input, common } => {
            let r = resolve(&common)?;
            let file = load_factor_file(&input.to_string_lossy())?;
            let dims = r.dims.unwrap_or(file.dims);
            let out = sparsify_cycle(&file.to_float()?, dims, &r.sparsify())?;
            let report = sparsity_report(&out.factors);
            eprintln!("{}", serde_json::to_string(&report)?);
            let json = FactorFile::from_float(dims, &out.factors).to_json()?;
            emit(r.out.as_deref(), &json)?;
            if let Some(o) = &r.out {
                write_atomic(&sibling(o, "_sparsity.json"), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
            }
            Ok(0)
        }
        Command::Rationalize { input, common } => {
            let r = resolve(&common)?;
            let file = load_factor_file(&input.to_string_lossy())?;
            let dims = r.dims.unwrap_or(file.dims);
            let rank = file.rank;
            let snap = snap_and_refit(&file.to_float()?, dims, &r.file.snap, &r.solver(rank))?;
            match &snap.exact {
                Some(exact) => {
                    emit(r.out.as_deref(), &FactorFile::from_exact(dims, exact).to_json()?)?;
                    eprintln!("verified rational decomposition ({} refits)", snap.refits);
                    Ok(0)
                }
                None => {
                    let free = snap.mask.iter().filter(|&&m| m).count();
                    emit(r.out.as_deref(), &FactorFile::from_float(dims, &snap.partial()).to_json()?)?;
                    eprintln!("snapping stopped with {free} free parameters; partial assignment written");
                    Ok(EXIT_BEST_EFFORT)
                }
            }
        }
        Command::Verify { input, common } => {
            let r = resolve(&common)?;
            let file = load_factor_file(&input)?;
            let out = cmd_verify(&file, r.dims)?;
            match out.verification {
                Verification::Certified(cert) => {
                    eprintln!("certified: {} rank {} ({} entries)", cert.dims, cert.rank, cert.entries);
                    emit(r.out.as_deref(), out.listing.as_deref().unwrap_or_default())?;
                    Ok(0)
                }
                Verification::Counterexample { index, expected, found } => {
                    eprintln!(
                        "counterexample at ({}, {}, {}): expected {expected}, found {found}",
                        index[0], index[1], index[2]
                    );
                    Ok(EXIT_COUNTEREXAMPLE)
                }
            }
        }
        Command::Export { input, format, common } => {
            let r = resolve(&common)?;
            let file = load_factor_file(&input)?;
            let dims = r.dims.unwrap_or(file.dims);
            let prog = export_bilinear(&file.to_exact()?, dims)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&prog)? + "\n",
                Format::Text => prog.to_text(),
                Format::Pseudocode => prog.to_pseudocode(),
            };
            emit(r.out.as_deref(), &text)?;
            Ok(0)
        }
    }
}
