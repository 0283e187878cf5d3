//! Factorization timings over a grid of sizes, solvers and precisions.

use std::io::Write;
use std::path::Path;

use qrkit::Precision;

use crate::factorize::{factorize, FactorReport, FactorSolver, FactorizeOptions};
use crate::svg::{render, Panel, Series};
use crate::{create_dir, write_file, Result};

pub const SWEEP_HEADER: &str = "problem,n,solver,precision,median_time_s,recon_err,final_energy";

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub sizes: Vec<usize>,
    pub solvers: Vec<FactorSolver>,
    pub precisions: Vec<Precision>,
    pub seed: u64,
    pub repeat: usize,
    pub noise: f64,
    pub dense_cap: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 5000, 10000],
            solvers: FactorSolver::ALL.to_vec(),
            precisions: vec![Precision::F64],
            seed: 0,
            repeat: 3,
            noise: 0.01,
            dense_cap: 2000,
        }
    }
}

/// Runs every `(size, solver, precision)` combination, sizes outermost.
pub fn sweep(opts: &SweepOptions) -> Result<Vec<FactorReport>> {
    let mut out = Vec::with_capacity(opts.sizes.len() * opts.solvers.len() * opts.precisions.len());
    for &n in &opts.sizes {
        for &solver in &opts.solvers {
            for &precision in &opts.precisions {
                out.push(factorize(&FactorizeOptions {
                    n,
                    solver,
                    precision,
                    seed: opts.seed,
                    repeat: opts.repeat,
                    noise: opts.noise,
                    dense_cap: opts.dense_cap,
                })?);
            }
        }
    }
    Ok(out)
}

/// `final_energy` is the linearized energy at the Gauss-Newton step.
pub fn write_sweep_csv<W: Write>(reports: &[FactorReport], mut w: W, timing: bool) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "ellipse,{},{},{},{:e},{:e},{:e}",
            r.n,
            r.solver.name(),
            r.precision.name(),
            if timing { r.median_time_s } else { 0.0 },
            r.recon_err,
            r.linearized_energy
        )?;
    }
    Ok(())
}

/// Median factorization time against `N`, log-log, one line per solver and
/// precision.
pub fn sweep_svg(reports: &[FactorReport]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in reports {
        let label = format!("{} {}", r.solver.name(), r.precision.name());
        let point = (r.n as f64, r.median_time_s);
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push(point),
            None => series.push(Series { label, points: vec![point] }),
        }
    }
    render(&[Panel {
        title: "ellipse Jacobian factorization".into(),
        x_label: "N (points)".into(),
        y_label: "median time [s]".into(),
        log_x: true,
        log_y: true,
        series,
    }])
}

/// Writes `sweep.csv` and `sweep.svg` into `dir`.
pub fn write_outputs(reports: &[FactorReport], dir: &Path, timing: bool) -> Result<()> {
    create_dir(dir)?;
    let mut csv = Vec::new();
    write_sweep_csv(reports, &mut csv, timing).map_err(|e| crate::BenchError::io(dir, e))?;
    write_file(&dir.join("sweep.csv"), &csv)?;
    write_file(&dir.join("sweep.svg"), sweep_svg(reports).as_bytes())
}
