//! Measurement harness behind the `qrkit-bench` binary: factorization
//! timings on the ellipse Jacobian, LM convergence runs, size sweeps, and
//! SVG plots of the results.

pub mod cli;
pub mod factorize;
pub mod optimize;
pub mod svg;
pub mod sweep;

use std::path::Path;

use thiserror::Error;

pub use cli::{run, Cli, Command};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),

    /// Missing or malformed input files.
    #[error("input: {0}")]
    Input(qrkit::Error),

    #[error(transparent)]
    Solver(#[from] qrkit::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    /// 2 for usage errors, 3 for input errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 2,
            BenchError::Input(_) => 3,
            BenchError::Solver(_) | BenchError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| BenchError::io(path, e))
}
