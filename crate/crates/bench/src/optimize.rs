//! Levenberg-Marquardt runs on the ellipse and bundle-adjustment problems.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use qrkit::levmar::{minimize, DampingMode, LmConfig, LmTrace, SolverKind};
use qrkit::problems::ellipse::read_points_csv;
use qrkit::problems::{
    generate_ellipse_data, moment_initial_params, read_bal_file, synthetic_scene, BalProblem, EllipseData,
    EllipseParams, EllipseProblem, SceneOptions, DUBROVNIK_FILE, TRAFALGAR_FILE,
};
use qrkit::{Precision, Scalar};
use serde::Serialize;

use crate::svg::{render, Panel, Series};
use crate::{create_dir, write_file, BenchError, Result};

/// Directory searched for the named BAL datasets.
pub const DATA_DIR_ENV: &str = "QRKIT_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum)]
pub enum ProblemKind {
    Ellipse,
    Ba,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Ellipse => "ellipse",
            ProblemKind::Ba => "ba",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum)]
pub enum Dataset {
    Trafalgar,
    Dubrovnik,
}

impl Dataset {
    pub fn file_name(self) -> &'static str {
        match self {
            Dataset::Trafalgar => TRAFALGAR_FILE,
            Dataset::Dubrovnik => DUBROVNIK_FILE,
        }
    }

    /// `$QRKIT_DATA_DIR/<file>` or its `.gz` sibling, whichever exists.
    pub fn locate(self) -> Result<PathBuf> {
        let dir = std::env::var_os(DATA_DIR_ENV).ok_or_else(|| {
            BenchError::Input(qrkit::Error::Io(format!(
                "{DATA_DIR_ENV} is not set; download {} from the BAL project page into a directory and point {DATA_DIR_ENV} at it",
                self.file_name()
            )))
        })?;
        let base = Path::new(&dir).join(self.file_name());
        let gz = PathBuf::from(format!("{}.gz", base.display()));
        [base.clone(), gz]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| {
                BenchError::Input(qrkit::Error::Io(format!(
                    "{} (or .gz) not found",
                    base.display()
                )))
            })
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeOptions {
    pub problem: ProblemKind,
    pub input: Option<PathBuf>,
    pub dataset: Option<Dataset>,
    /// Synthetic ellipse size.
    pub n: usize,
    pub seed: u64,
    /// Synthetic ellipse noise (standard deviation per coordinate).
    pub noise: f64,
    /// Synthetic bundle-adjustment scene size.
    pub cameras: usize,
    pub points: usize,
    pub solver: SolverKind,
    pub precision: Precision,
    pub damping: DampingMode,
    pub max_iters: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Ellipse,
            input: None,
            dataset: None,
            n: 500,
            seed: 0,
            noise: 0.05,
            cameras: 8,
            points: 200,
            solver: SolverKind::Qrkit,
            precision: Precision::F64,
            damping: DampingMode::Identity,
            max_iters: 100,
        }
    }
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub problem: String,
    pub solver: String,
    pub precision: String,
    pub final_energy: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub total_time_s: f64,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub summary: Summary,
    pub trace: LmTrace,
}

/// A problem instance with its starting point, in double precision.
#[derive(Clone, Debug)]
pub enum Loaded {
    Ellipse { points: Vec<[f64; 2]>, x0: Vec<f64> },
    Ba(BalProblem),
}

pub fn load(opts: &OptimizeOptions) -> Result<Loaded> {
    if opts.input.is_some() && opts.dataset.is_some() {
        return Err(BenchError::Usage("--input and --dataset are mutually exclusive".into()));
    }
    match opts.problem {
        ProblemKind::Ellipse => {
            if opts.dataset.is_some() {
                return Err(BenchError::Usage("--dataset names bundle-adjustment problems".into()));
            }
            let data = match &opts.input {
                Some(path) => return load_ellipse_file(path),
                None => generate_ellipse_data(opts.n, EllipseParams::default(), opts.noise, opts.seed)?,
            };
            Ok(Loaded::Ellipse {
                x0: data.initial_params(),
                points: data.points,
            })
        }
        ProblemKind::Ba => {
            let path = match (&opts.input, opts.dataset) {
                (Some(p), _) => Some(p.clone()),
                (None, Some(d)) => Some(d.locate()?),
                (None, None) => None,
            };
            match path {
                Some(p) => read_bal_file(&p).map(Loaded::Ba).map_err(BenchError::Input),
                None => {
                    let scene = SceneOptions {
                        cameras: opts.cameras,
                        points: opts.points,
                        seed: opts.seed,
                        ..SceneOptions::default()
                    };
                    Ok(Loaded::Ba(synthetic_scene(scene)?.0))
                }
            }
        }
    }
}

/// With a JSON sidecar the generated starting point is reproduced, otherwise
/// the start comes from the point moments.
fn load_ellipse_file(path: &Path) -> Result<Loaded> {
    if path.with_extension("json").is_file() {
        let data = EllipseData::load(path).map_err(BenchError::Input)?;
        return Ok(Loaded::Ellipse {
            x0: data.initial_params(),
            points: data.points,
        });
    }
    let file = std::fs::File::open(path)
        .map_err(|e| BenchError::Input(qrkit::Error::Io(format!("{}: {e}", path.display()))))?;
    let points = read_points_csv(std::io::BufReader::new(file))
        .map_err(|e| BenchError::Input(e.context(path.display().to_string())))?;
    let x0 = moment_initial_params(&points).map_err(BenchError::Input)?;
    Ok(Loaded::Ellipse { points, x0 })
}

pub fn optimize(opts: &OptimizeOptions) -> Result<OptimizeReport> {
    let loaded = load(opts)?;
    optimize_loaded(&loaded, opts)
}

pub fn optimize_loaded(loaded: &Loaded, opts: &OptimizeOptions) -> Result<OptimizeReport> {
    let mut config = LmConfig::for_precision(opts.precision);
    config.solver = opts.solver;
    config.damping = opts.damping;
    config.max_iterations = opts.max_iters;
    let trace = match opts.precision {
        Precision::F32 => run_as::<f32>(loaded, &config)?,
        Precision::F64 => run_as::<f64>(loaded, &config)?,
    };
    let summary = Summary {
        problem: opts.problem.name().into(),
        solver: opts.solver.name().into(),
        precision: opts.precision.name().into(),
        final_energy: trace.final_energy(),
        iterations: trace.iterations(),
        accepted_steps: trace.accepted_steps(),
        total_time_s: trace.total_time(),
        status: trace.status.as_str().into(),
    };
    Ok(OptimizeReport { summary, trace })
}

fn run_as<T: Scalar>(loaded: &Loaded, config: &LmConfig) -> Result<LmTrace> {
    let cast = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    let result = match loaded {
        Loaded::Ellipse { points, x0 } => {
            let problem = EllipseProblem::<T>::new(points.iter().map(|p| [T::of(p[0]), T::of(p[1])]).collect());
            minimize(&problem, &cast(x0), config)?
        }
        Loaded::Ba(bal) => minimize(&bal.problem::<T>(), &cast(&bal.params()), config)?,
    };
    Ok(result.trace)
}

impl OptimizeReport {
    /// Writes `trace.csv`, `summary.json` and `convergence.svg` into `dir`.
    /// With `timing = false` every time is written as 0.
    pub fn write_outputs(&self, dir: &Path, timing: bool) -> Result<()> {
        create_dir(dir)?;
        let mut csv = Vec::new();
        self.trace.write_csv(&mut csv, timing)?;
        write_file(&dir.join("trace.csv"), &csv)?;

        let mut summary = self.summary.clone();
        if !timing {
            summary.total_time_s = 0.0;
        }
        let mut json = serde_json::to_string_pretty(&summary)
            .map_err(|e| qrkit::Error::Io(e.to_string()))?;
        json.push('\n');
        write_file(&dir.join("summary.json"), json.as_bytes())?;
        write_file(&dir.join("convergence.svg"), self.convergence_svg(timing).as_bytes())
    }

    /// Energy against wall time and against iteration, log-scaled energy.
    pub fn convergence_svg(&self, timing: bool) -> String {
        let label = format!("{} ({})", self.summary.solver, self.summary.precision);
        let recs = &self.trace.records;
        let by_time = recs
            .iter()
            .map(|r| (if timing { r.time_s } else { 0.0 }, r.energy))
            .collect();
        let by_iter = recs.iter().map(|r| (r.iter as f64, r.energy)).collect();
        let title = format!("{} convergence", self.summary.problem);
        render(&[
            Panel {
                title: title.clone(),
                x_label: "time [s]".into(),
                y_label: "energy".into(),
                log_x: false,
                log_y: true,
                series: vec![Series { label: label.clone(), points: by_time }],
            },
            Panel {
                title,
                x_label: "iteration".into(),
                y_label: "energy".into(),
                log_x: false,
                log_y: true,
                series: vec![Series { label, points: by_iter }],
            },
        ])
    }
}
