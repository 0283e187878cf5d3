//! Timed QR factorizations of the ellipse-fitting Jacobian.

use std::io::Write;
use std::time::Instant;

use clap::ValueEnum;
use qrkit::levmar::{Jacobian, LeastSquaresProblem};
use qrkit::matrix::{BandedBlockMatrix, BlockDiagonalMatrix, DenseMatrix};
use qrkit::problems::{generate_ellipse_data, EllipseParams};
use qrkit::structured::{BlockBandedQr, BlockDiagonalQr, DenseQr, HorzCat, QrFactor, QrSolver};
use qrkit::{Precision, Scalar};

use crate::{median, Result};

/// Columns per chunk when checking `Qᵀ A = [R; 0]`.
const RECON_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum)]
pub enum FactorSolver {
    /// `HorzCat` of a block-diagonal QR and a dense QR.
    #[value(name = "blockdiag")]
    BlockDiag,
    /// `HorzCat` of a block-banded QR (zero overlaps) and a dense QR.
    #[value(name = "blockbanded")]
    BlockBanded,
    /// Blocked dense Householder on the densified Jacobian.
    #[value(name = "dense-baseline")]
    DenseBaseline,
}

impl FactorSolver {
    pub const ALL: [FactorSolver; 3] = [
        FactorSolver::BlockDiag,
        FactorSolver::BlockBanded,
        FactorSolver::DenseBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FactorSolver::BlockDiag => "blockdiag",
            FactorSolver::BlockBanded => "blockbanded",
            FactorSolver::DenseBaseline => "dense-baseline",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FactorizeOptions {
    pub n: usize,
    pub solver: FactorSolver,
    pub precision: Precision,
    pub seed: u64,
    pub repeat: usize,
    pub noise: f64,
    /// Largest `n` the dense baseline actually factors; beyond it the time is
    /// extrapolated cubically from a run at the cap.
    pub dense_cap: usize,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self {
            n: 500,
            solver: FactorSolver::BlockDiag,
            precision: Precision::F64,
            seed: 0,
            repeat: 5,
            noise: 0.01,
            dense_cap: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorRun {
    pub run: usize,
    pub time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorReport {
    pub n: usize,
    pub solver: FactorSolver,
    pub precision: Precision,
    pub runs: Vec<FactorRun>,
    pub median_time_s: f64,
    /// `‖Qᵀ A − [R; 0]‖_F`, NaN when extrapolated.
    pub recon_err: f64,
    pub a_norm: f64,
    /// Nonzeros of `R` for the instance actually factored (the cap-sized one
    /// when extrapolated).
    pub r_nnz: usize,
    /// `½ ‖J p + f‖²` at the Gauss-Newton step, NaN when extrapolated.
    pub linearized_energy: f64,
    /// Times scaled from a run at the dense cap.
    pub extrapolated: bool,
}

pub const RUN_HEADER: &str = "problem,n,solver,precision,run,time_s,recon_err,a_norm,r_nnz,extrapolated";

impl FactorReport {
    /// `64 · ε · ‖A‖_F`.
    pub fn recon_bound(&self) -> f64 {
        64.0 * self.precision.epsilon() * self.a_norm
    }

    /// One row per run; `timing = false` writes every time as 0.
    pub fn write_runs<W: Write>(&self, mut w: W, header: bool, timing: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "{RUN_HEADER}")?;
        }
        for r in &self.runs {
            writeln!(
                w,
                "ellipse,{},{},{},{},{:e},{:e},{:e},{},{}",
                self.n,
                self.solver.name(),
                self.precision.name(),
                r.run,
                if timing { r.time_s } else { 0.0 },
                self.recon_err,
                self.a_norm,
                self.r_nnz,
                u8::from(self.extrapolated)
            )?;
        }
        Ok(())
    }
}

/// The ellipse Jacobian and residual at the perturbed starting point.
pub fn ellipse_system<T: Scalar>(n: usize, seed: u64, noise: f64) -> Result<(Jacobian<T>, Vec<T>)> {
    let data = generate_ellipse_data(n, EllipseParams::default(), noise, seed)?;
    let problem = data.problem::<T>();
    let x0: Vec<T> = data.initial_params().into_iter().map(T::of).collect();
    Ok((problem.jacobian(&x0)?, problem.residuals(&x0)?))
}

pub fn factorize(opts: &FactorizeOptions) -> Result<FactorReport> {
    match opts.precision {
        Precision::F32 => factorize_as::<f32>(opts),
        Precision::F64 => factorize_as::<f64>(opts),
    }
}

enum Prepared<T> {
    Angular(BlockDiagonalMatrix<T>, DenseMatrix<T>),
    Banded(BandedBlockMatrix<T>, DenseMatrix<T>),
    Dense(DenseMatrix<T>),
}

fn prepare<T: Scalar>(solver: FactorSolver, j: &Jacobian<T>) -> Result<Prepared<T>> {
    let Jacobian::BlockAngular { left, right } = j else {
        return Err(qrkit::Error::Structure {
            block: 0,
            reason: "ellipse jacobian is expected to be block-angular".into(),
        }
        .into());
    };
    Ok(match solver {
        FactorSolver::BlockDiag => Prepared::Angular(left.clone(), right.clone()),
        FactorSolver::BlockBanded => {
            let k = left.num_blocks();
            let banded = BandedBlockMatrix::stacked(left.blocks().to_vec(), vec![0; k.saturating_sub(1)])?;
            Prepared::Banded(banded, right.clone())
        }
        FactorSolver::DenseBaseline => Prepared::Dense(j.to_dense()),
    })
}

fn compute<T: Scalar>(input: &Prepared<T>) -> Result<Box<dyn QrFactor<T>>> {
    Ok(match input {
        Prepared::Angular(l, r) => Box::new(HorzCat::<BlockDiagonalQr>::default().compute_parts(l, r)?),
        Prepared::Banded(l, r) => Box::new(HorzCat::<BlockBandedQr>::default().compute_parts(l, r)?),
        Prepared::Dense(a) => Box::new(DenseQr::default().compute(a)?),
    })
}

fn factorize_as<T: Scalar>(opts: &FactorizeOptions) -> Result<FactorReport> {
    if opts.n == 0 || opts.repeat == 0 {
        return Err(crate::BenchError::Usage("--n and --repeat must be positive".into()));
    }
    let extrapolated = opts.solver == FactorSolver::DenseBaseline && opts.n > opts.dense_cap;
    let n_run = if extrapolated { opts.dense_cap.max(1) } else { opts.n };
    let scale = if extrapolated { (opts.n as f64 / n_run as f64).powi(3) } else { 1.0 };

    let (j, f) = ellipse_system::<T>(n_run, opts.seed, opts.noise)?;
    let input = prepare(opts.solver, &j)?;
    let mut runs = Vec::with_capacity(opts.repeat);
    let mut last = None;
    for run in 0..opts.repeat {
        let start = Instant::now();
        let factor = compute(&input)?;
        let time_s = start.elapsed().as_secs_f64() * scale;
        runs.push(FactorRun { run, time_s });
        last = Some(factor);
    }
    let factor = last.expect("repeat is positive");

    let (recon_err, a_norm, r_nnz, linearized_energy) = if extrapolated {
        let (full, _) = ellipse_system::<T>(opts.n, opts.seed, opts.noise)?;
        (f64::NAN, frobenius(&full), factor.r_triplets().entries().len(), f64::NAN)
    } else {
        let (err, norm) = reconstruction_error(&*factor, &j)?;
        (err, norm, factor.r_triplets().entries().len(), linearized_energy(&*factor, &f)?)
    };
    Ok(FactorReport {
        n: opts.n,
        solver: opts.solver,
        precision: opts.precision,
        median_time_s: median(&runs.iter().map(|r| r.time_s).collect::<Vec<_>>()),
        runs,
        recon_err,
        a_norm,
        r_nnz,
        linearized_energy,
        extrapolated,
    })
}

fn frobenius<T: Scalar>(j: &Jacobian<T>) -> f64 {
    j.to_triplets()
        .entries()
        .iter()
        .map(|&(_, _, v)| v.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `(‖Qᵀ A − [R; 0]‖_F, ‖A‖_F)`, evaluated a chunk of columns at a time so
/// neither `A` nor `Q` is ever dense in full.
pub fn reconstruction_error<T: Scalar, F: QrFactor<T> + ?Sized>(
    factor: &F,
    j: &Jacobian<T>,
) -> Result<(f64, f64)> {
    let (rows, cols) = (j.rows(), j.cols());
    let mut a_cols: Vec<Vec<(usize, T)>> = vec![Vec::new(); cols];
    for &(r, c, v) in j.to_triplets().entries() {
        a_cols[c].push((r, v));
    }
    let mut r_cols: Vec<Vec<(usize, T)>> = vec![Vec::new(); cols];
    for &(r, c, v) in factor.r_triplets().entries() {
        r_cols[c].push((r, v));
    }
    let mut err2 = 0.0;
    let mut norm2 = 0.0;
    for c0 in (0..cols).step_by(RECON_CHUNK) {
        let nc = RECON_CHUNK.min(cols - c0);
        let mut chunk = DenseMatrix::<T>::zeros(rows, nc);
        for k in 0..nc {
            let col = chunk.col_mut(k);
            for &(r, v) in &a_cols[c0 + k] {
                col[r] += v;
                norm2 += v.as_f64().powi(2);
            }
        }
        factor.apply_qt_in_place(&mut chunk)?;
        for k in 0..nc {
            let col = chunk.col_mut(k);
            for &(r, v) in &r_cols[c0 + k] {
                col[r] -= v;
            }
            err2 += col.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        }
    }
    Ok((err2.sqrt(), norm2.sqrt()))
}

/// `½ ‖(Qᵀ f)[cols..]‖²`, the residual energy of the linearized model at the
/// Gauss-Newton step.
pub fn linearized_energy<T: Scalar, F: QrFactor<T> + ?Sized>(factor: &F, f: &[T]) -> Result<f64> {
    let qtf = factor.q_transpose_apply(&DenseMatrix::column_vector(f))?;
    let tail = &qtf.col(0)[factor.cols().min(qtf.rows())..];
    Ok(0.5 * tail.iter().map(|v| v.as_f64().powi(2)).sum::<f64>())
}
