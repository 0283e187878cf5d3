//! Levenberg-Marquardt drivers over structured Jacobians.
//!
//! Every driver minimizes `E(x) = ½ ‖f(x)‖²`. The damped step solves
//! `min ‖J p + f‖² + λ ‖D p‖²`; the drivers differ in how that subproblem is
//! factored and how `λ` is chosen:
//!
//! * [`backtrack_lm`]: one structured QR of the row-permuted `[J; √λ D]` per
//!   trial, multiplicative `λ` control, `J` reused across rejected trials.
//! * [`more_lm`]: `J = QR` once per iterate, then `[R; √λ D]` per trial, with
//!   `λ` picked by a trust-region iteration on `‖D p(λ)‖ = Δ`.
//! * [`cholesky_lm`]: the normal equations `(JᵀJ + λD²) p = −Jᵀf`, with
//!   Schur elimination of latent blocks.

pub mod cholesky;
mod driver;
mod jacobian;
mod step;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::householder::DEFAULT_BLOCK_WIDTH;
use crate::matrix::DenseMatrix;
use crate::scalar::{Precision, Scalar};

pub use driver::{backtrack_lm, cholesky_lm, minimize, more_lm, LmResult};
pub use jacobian::Jacobian;
pub use step::{damped_step, DampedSolve, NormalEquations, QrAugmented, QrCholesky, TwoStepQr};

/// A nonlinear least-squares problem `min ½ ‖f(x)‖²` with `n` residuals and
/// `m` parameters.
pub trait LeastSquaresProblem<T: Scalar> {
    fn num_params(&self) -> usize;

    fn num_residuals(&self) -> usize;

    fn residuals(&self, x: &[T]) -> Result<Vec<T>>;

    /// `∂f/∂x` at `x`, in whichever structure the problem exposes.
    fn jacobian(&self, x: &[T]) -> Result<Jacobian<T>>;
}

/// `½ Σ fᵢ²`, rejecting non-finite residuals.
pub fn energy_of<T: Scalar>(f: &[T]) -> Result<T> {
    let mut s = T::zero();
    for (i, &v) in f.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        s += v * v;
    }
    Ok(s * T::of(0.5))
}

pub fn energy<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(problem: &P, x: &[T]) -> Result<T> {
    check_len(problem, x)?;
    energy_of(&problem.residuals(x)?)
}

fn check_len<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(problem: &P, x: &[T]) -> Result<()> {
    if x.len() != problem.num_params() {
        return Err(Error::dims(
            "parameter vector",
            (problem.num_residuals(), problem.num_params()),
            (x.len(), 1),
        ));
    }
    Ok(())
}

/// Central-difference Jacobian with `h = ε^{1/3} (1 + |xᵢ|)`.
pub fn finite_difference_jacobian<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
) -> Result<DenseMatrix<T>> {
    let all: Vec<usize> = (0..x.len()).collect();
    finite_difference_columns(problem, x, &all)
}

/// Central differences for the listed columns only (`n x cols.len()`).
pub fn finite_difference_columns<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    cols: &[usize],
) -> Result<DenseMatrix<T>> {
    check_len(problem, x)?;
    let n = problem.num_residuals();
    let m = problem.num_params();
    let cbrt_eps = T::epsilon().cbrt();
    let mut out = DenseMatrix::zeros(n, cols.len());
    let mut xp = x.to_vec();
    for (k, &j) in cols.iter().enumerate() {
        if j >= m {
            return Err(Error::IndexOutOfBounds { row: 0, col: j, rows: n, cols: m });
        }
        let h = cbrt_eps * (T::one() + x[j].abs());
        xp[j] = x[j] + h;
        let fp = problem.residuals(&xp)?;
        xp[j] = x[j] - h;
        let fm = problem.residuals(&xp)?;
        xp[j] = x[j];
        // The actual spacing after rounding, not the nominal one.
        let span = (x[j] + h) - (x[j] - h);
        for (o, (a, b)) in out.col_mut(k).iter_mut().zip(fp.iter().zip(&fm)) {
            *o = (*a - *b) / span;
        }
    }
    Ok(out)
}

/// Outcome of comparing an analytic Jacobian against finite differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianCheck {
    pub max_abs_deviation: f64,
    pub max_abs_entry: f64,
}

impl JacobianCheck {
    /// `‖J − J_fd‖_max ≤ rel · (1 + ‖J‖_max)`.
    pub fn passes(&self, rel: f64) -> bool {
        self.max_abs_deviation <= rel * (1.0 + self.max_abs_entry)
    }
}

pub fn check_jacobian<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
) -> Result<JacobianCheck> {
    let all: Vec<usize> = (0..x.len()).collect();
    check_jacobian_columns(problem, x, &all)
}

/// [`check_jacobian`] restricted to a subset of columns, for problems too
/// large to difference in full.
pub fn check_jacobian_columns<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    cols: &[usize],
) -> Result<JacobianCheck> {
    let analytic = problem.jacobian(x)?;
    if analytic.rows() != problem.num_residuals() || analytic.cols() != problem.num_params() {
        return Err(Error::dims(
            "jacobian",
            (problem.num_residuals(), problem.num_params()),
            (analytic.rows(), analytic.cols()),
        ));
    }
    let fd = finite_difference_columns(problem, x, cols)?;
    let mut dev = T::zero();
    let mut big = T::zero();
    let mut e = vec![T::zero(); analytic.cols()];
    for (k, &j) in cols.iter().enumerate() {
        // Column j of the analytic Jacobian as J eⱼ.
        e[j] = T::one();
        let col = analytic.mul_vec(&e)?;
        e[j] = T::zero();
        for (a, b) in col.iter().zip(fd.col(k)) {
            dev = dev.max((*a - *b).abs());
            big = big.max(a.abs());
        }
    }
    Ok(JacobianCheck {
        max_abs_deviation: dev.as_f64(),
        max_abs_entry: big.as_f64(),
    })
}

/// The damping matrix `D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingMode {
    /// `D = I` (Levenberg).
    Identity,
    /// `D = diag(JᵀJ)^½`, zero columns replaced by 1 (Marquardt).
    Marquardt,
}

impl DampingMode {
    pub fn name(self) -> &'static str {
        match self {
            DampingMode::Identity => "identity",
            DampingMode::Marquardt => "marquardt",
        }
    }

    pub fn diagonal<T: Scalar>(self, j: &Jacobian<T>) -> Vec<T> {
        match self {
            DampingMode::Identity => vec![T::one(); j.cols()],
            DampingMode::Marquardt => j
                .column_sq_norms()
                .into_iter()
                .map(|s| if s > T::zero() { s.sqrt() } else { T::one() })
                .collect(),
        }
    }
}

impl FromStr for DampingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(DampingMode::Identity),
            "marquardt" => Ok(DampingMode::Marquardt),
            other => Err(format!("unknown damping `{other}` (expected identity or marquardt)")),
        }
    }
}

impl fmt::Display for DampingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the damped subproblem is solved (and, for `MoreQr`, how `λ` is chosen).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum SolverKind {
    /// Single structured QR of the augmented system per trial.
    Qrkit,
    /// QR of the latent blocks, Cholesky of the reduced global system.
    QrkitCholesky,
    /// Two-step QR with a trust-region choice of `λ`.
    MoreQr,
    /// Normal equations with Schur elimination.
    Cholesky,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::Qrkit,
        SolverKind::QrkitCholesky,
        SolverKind::MoreQr,
        SolverKind::Cholesky,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Qrkit => "qrkit",
            SolverKind::QrkitCholesky => "qrkit-cholesky",
            SolverKind::MoreQr => "more-qr",
            SolverKind::Cholesky => "cholesky",
        }
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!("unknown solver `{s}` (expected qrkit, qrkit-cholesky, more-qr or cholesky)")
            })
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    /// Initial damping; `None` means `1e-3 · max diag(JᵀJ)` at `x₀`.
    pub lambda0: Option<f64>,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Cap on λ trials (each trial is one trace row).
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub energy_tol: f64,
    pub damping: DampingMode,
    pub solver: SolverKind,
    /// Initial trust radius for `MoreQr`; `None` means `‖D x₀‖` (or 1).
    pub initial_radius: Option<f64>,
    /// Reflectors per compressed WY block in the dense kernels.
    pub block_width: usize,
}

impl LmConfig {
    /// Defaults with stopping tolerances scaled to the precision.
    pub fn for_precision(p: Precision) -> Self {
        let (grad_tol, step_tol, energy_tol) = match p {
            Precision::F64 => (1e-8, 1e-10, 1e-12),
            Precision::F32 => (1e-4, 1e-5, 1e-6),
        };
        Self {
            lambda0: None,
            lambda_up: 2.0,
            lambda_down: 1.0 / 3.0,
            max_iterations: 200,
            grad_tol,
            step_tol,
            energy_tol,
            damping: DampingMode::Identity,
            solver: SolverKind::Qrkit,
            initial_radius: None,
            block_width: DEFAULT_BLOCK_WIDTH,
        }
    }

    pub fn for_scalar<T: Scalar>() -> Self {
        if T::NAME == "f32" {
            Self::for_precision(Precision::F32)
        } else {
            Self::for_precision(Precision::F64)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda_up > 1.0) {
            return bad(format!("lambda_up must exceed 1, got {}", self.lambda_up));
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return bad(format!("lambda_down must lie in (0, 1), got {}", self.lambda_down));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("energy_tol", self.energy_tol),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(l) = self.lambda0 {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda0 must be positive and finite, got {l}"));
            }
        }
        if let Some(r) = self.initial_radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("initial_radius must be positive and finite, got {r}"));
            }
        }
        if self.block_width == 0 {
            return bad("block_width must be at least 1".into());
        }
        Ok(())
    }
}

impl Default for LmConfig {
    fn default() -> Self {
        Self::for_precision(Precision::F64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    ConvergedGradient,
    ConvergedStep,
    ConvergedEnergy,
    MaxIterations,
    /// λ exceeded its cap (or the trust radius collapsed) without progress.
    Failed,
}

impl LmStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            LmStatus::ConvergedGradient => "converged_gradient",
            LmStatus::ConvergedStep => "converged_step",
            LmStatus::ConvergedEnergy => "converged_energy",
            LmStatus::MaxIterations => "max_iterations",
            LmStatus::Failed => "failed",
        }
    }

    pub fn is_converged(self) -> bool {
        matches!(
            self,
            LmStatus::ConvergedGradient | LmStatus::ConvergedStep | LmStatus::ConvergedEnergy
        )
    }
}

impl fmt::Display for LmStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One λ trial (row 0 is the starting point).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LmRecord {
    pub iter: usize,
    /// Energy of the current iterate after this trial.
    pub energy: f64,
    pub lambda: f64,
    pub step_norm: f64,
    /// `‖Jᵀf‖_∞` at the current iterate.
    pub grad_norm: f64,
    pub accepted: bool,
    /// Wall time since the driver started.
    pub time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmTrace {
    pub records: Vec<LmRecord>,
    pub status: LmStatus,
}

pub const TRACE_HEADER: &str = "iter,energy,lambda,step_norm,grad_norm,accepted,time_s";

impl LmTrace {
    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.energy)
    }

    /// Number of λ trials.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn accepted_steps(&self) -> usize {
        self.records.iter().skip(1).filter(|r| r.accepted).count()
    }

    pub fn total_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.time_s)
    }

    /// Energies of the accepted iterates, starting point included.
    pub fn accepted_energies(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.accepted).map(|r| r.energy).collect()
    }

    /// Writes the trace as CSV. With `timing = false` every `time_s` is 0,
    /// which makes the output reproducible bit for bit.
    pub fn write_csv<W: Write>(&self, mut w: W, timing: bool) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{},{:e}",
                r.iter,
                r.energy,
                r.lambda,
                r.step_norm,
                r.grad_norm,
                u8::from(r.accepted),
                if timing { r.time_s } else { 0.0 }
            )?;
        }
        Ok(())
    }
}
