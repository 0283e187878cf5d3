//! Command-line definition and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qrkit::levmar::{DampingMode, SolverKind};
use qrkit::Precision;

use crate::factorize::{factorize, FactorSolver, FactorizeOptions};
use crate::optimize::{optimize, Dataset, OptimizeOptions, ProblemKind};
use crate::sweep::{sweep, SweepOptions};
use crate::{create_dir, write_file, BenchError, Result};

#[derive(Debug, Parser)]
#[command(name = "qrkit-bench", version, about = "Structured QR and Levenberg-Marquardt benchmarks")]
pub struct Cli {
    /// Worker threads for block-level parallelism (1 gives reproducible runs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Write every timing column as 0 so repeated runs produce identical files.
    #[arg(long, global = true)]
    pub no_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time QR factorizations of the ellipse-fitting Jacobian.
    Factorize(FactorizeArgs),
    /// Run a Levenberg-Marquardt solver and write its trace.
    Optimize(OptimizeArgs),
    /// Factorization timings over sizes x solvers x precisions.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FactorProblem {
    Ellipse,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    #[arg(long, value_enum, default_value = "ellipse")]
    pub problem: FactorProblem,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "blockdiag")]
    pub solver: FactorSolver,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Largest N the dense baseline factors; larger N is extrapolated as N³.
    #[arg(long, default_value_t = 2000)]
    pub dense_cap: usize,
    /// Per-run CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "ellipse")]
    pub problem: ProblemKind,
    /// Ellipse `x,y` CSV or BAL file (plain or gzip).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Named BAL problem looked up in $QRKIT_DATA_DIR.
    #[arg(long, value_enum)]
    pub dataset: Option<Dataset>,
    /// Points of a generated ellipse.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Cameras of a generated bundle-adjustment scene.
    #[arg(long, default_value_t = 8)]
    pub cameras: usize,
    /// Points of a generated bundle-adjustment scene.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value = "qrkit")]
    pub solver: SolverKind,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
    #[arg(long, default_value = "identity")]
    pub damping: DampingMode,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Output directory for trace.csv, summary.json and convergence.svg.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value = "ellipse")]
    pub problem: FactorProblem,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,5000,10000")]
    pub sizes: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "blockdiag,blockbanded,dense-baseline")]
    pub solvers: Vec<FactorSolver>,
    #[arg(long, value_delimiter = ',', default_value = "f64")]
    pub precisions: Vec<Precision>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 2000)]
    pub dense_cap: usize,
    /// Output directory for sweep.csv and sweep.svg.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command, inside a dedicated pool when `--threads` is given.
pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(BenchError::Usage("--threads must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| BenchError::Usage(format!("cannot build thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command, !cli.no_timing))
        }
        None => dispatch(&cli.command, !cli.no_timing),
    }
}

fn dispatch(command: &Command, timing: bool) -> Result<()> {
    match command {
        Command::Factorize(a) => {
            let report = factorize(&FactorizeOptions {
                n: a.n,
                solver: a.solver,
                precision: a.precision,
                seed: a.seed,
                repeat: a.repeat,
                noise: a.noise,
                dense_cap: a.dense_cap,
            })?;
            let mut csv = Vec::new();
            report.write_runs(&mut csv, true, timing).map_err(|e| BenchError::io(&PathBuf::from("-"), e))?;
            match &a.out {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        create_dir(parent)?;
                    }
                    write_file(path, &csv)?;
                }
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }
            eprintln!(
                "{} n={} {}: median {:.6} s{}, recon_err {:e} (bound {:e}), R nnz {}",
                report.solver.name(),
                report.n,
                report.precision.name(),
                report.median_time_s,
                if report.extrapolated { " (extrapolated)" } else { "" },
                report.recon_err,
                report.recon_bound(),
                report.r_nnz
            );
            Ok(())
        }
        Command::Optimize(a) => {
            let report = optimize(&OptimizeOptions {
                problem: a.problem,
                input: a.input.clone(),
                dataset: a.dataset,
                n: a.n,
                seed: a.seed,
                noise: a.noise,
                cameras: a.cameras,
                points: a.points,
                solver: a.solver,
                precision: a.precision,
                damping: a.damping,
                max_iters: a.max_iters,
            })?;
            report.write_outputs(&a.out, timing)?;
            let s = &report.summary;
            eprintln!(
                "{} {} {}: energy {:e} after {} iterations ({} accepted), status {}",
                s.problem, s.solver, s.precision, s.final_energy, s.iterations, s.accepted_steps, s.status
            );
            Ok(())
        }
        Command::Sweep(a) => {
            let reports = sweep(&SweepOptions {
                sizes: a.sizes.clone(),
                solvers: a.solvers.clone(),
                precisions: a.precisions.clone(),
                seed: a.seed,
                repeat: a.repeat,
                noise: a.noise,
                dense_cap: a.dense_cap,
            })?;
            crate::sweep::write_outputs(&reports, &a.out, timing)?;
            eprintln!("{} rows written to {}", reports.len(), a.out.join("sweep.csv").display());
            Ok(())
        }
    }
}
