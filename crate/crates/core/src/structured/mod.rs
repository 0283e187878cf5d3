//! Composable structure-aware QR solvers.
//!
//! Every solver produces a factor implementing [`QrFactor`]: an implicit
//! full-size orthogonal `Q` (applied, never materialized) and an upper
//! triangular `R`. Rows of `Qᵀ B` past index `cols` are always `Q⊥ᵀ B`,
//! which is what lets factors nest: [`HorzCat`] needs `Q⊥₁ᵀ A₂` from its
//! left factor whatever that factor's type is.
//!
//! Composition is static (`HorzCat<BlockDiagonalQr>`), with [`AnyQr`] over
//! [`StructuredMatrix`] as a runtime-dispatched alternative.

mod banded;
mod block_diagonal;
mod dense;
mod horzcat;
mod vertcat;

pub use banded::{BlockBandedQr, BlockBandedQrFactor};
pub use block_diagonal::{BlockDiagonalQr, BlockDiagonalQrFactor};
pub use dense::DenseQr;
pub use horzcat::{HorzCat, HorzCatMatrix, HorzCatQrFactor};
pub use vertcat::{banded_from_sorted_rows, VertCat, VertCatMatrix, VertCatQrFactor};

use crate::error::{Error, Result};
use crate::householder::DEFAULT_BLOCK_WIDTH;
use crate::matrix::{BandedBlockMatrix, BlockDiagonalMatrix, DenseMatrix, TripletMatrix};
use crate::scalar::Scalar;

/// A computed QR factorization `A = Q [R; 0]` with `Q` kept implicit.
pub trait QrFactor<T: Scalar>: Send + Sync {
    fn rows(&self) -> usize;

    fn cols(&self) -> usize;

    /// `b ← Qᵀ b` with the full `rows x rows` orthogonal factor.
    fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()>;

    /// `b ← Q b` with the full orthogonal factor.
    fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()>;

    /// Solves `R x = b` in place; `b` has `cols` rows.
    fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()>;

    /// Solves `Rᵀ y = b` in place; `b` has `cols` rows.
    fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()>;

    /// Nonzero entries of `R` (`min(rows, cols) x cols`).
    fn r_triplets(&self) -> TripletMatrix<T>;

    /// Scalars stored to represent `Q`.
    fn q_storage(&self) -> usize;

    /// Rows of `R`: `min(rows, cols)`.
    fn rank_rows(&self) -> usize {
        self.rows().min(self.cols())
    }

    fn q_transpose_apply(&self, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut out = b.clone();
        self.apply_qt_in_place(&mut out)?;
        Ok(out)
    }

    fn q_apply(&self, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut out = b.clone();
        self.apply_q_in_place(&mut out)?;
        Ok(out)
    }

    /// Dense `R`, for inspection and tests.
    fn matrix_r(&self) -> DenseMatrix<T> {
        self.r_triplets().to_dense()
    }

    /// `argmin ‖A x − b‖₂`: `x = R⁻¹ (Qᵀ b)[..cols]`.
    fn solve(&self, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if b.rows() != self.rows() {
            return Err(Error::dims("solve", (self.rows(), self.cols()), b.shape()));
        }
        if self.rows() < self.cols() {
            return Err(Error::dims("solve (needs rows >= cols)", (self.rows(), self.cols()), b.shape()));
        }
        let qtb = self.q_transpose_apply(b)?;
        let mut x = qtb.rows_range(0, self.cols());
        self.solve_r_in_place(&mut x)?;
        Ok(x)
    }
}

impl<T: Scalar, F: QrFactor<T> + ?Sized> QrFactor<T> for Box<F> {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        (**self).apply_qt_in_place(b)
    }
    fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        (**self).apply_q_in_place(b)
    }
    fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        (**self).solve_r_in_place(b)
    }
    fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        (**self).solve_rt_in_place(b)
    }
    fn r_triplets(&self) -> TripletMatrix<T> {
        (**self).r_triplets()
    }
    fn q_storage(&self) -> usize {
        (**self).q_storage()
    }
    fn rank_rows(&self) -> usize {
        (**self).rank_rows()
    }
}

/// Shape and densification for every solver input.
pub trait MatrixShape<T: Scalar> {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn to_dense(&self) -> DenseMatrix<T>;
}

impl<T: Scalar> MatrixShape<T> for DenseMatrix<T> {
    fn rows(&self) -> usize {
        DenseMatrix::rows(self)
    }
    fn cols(&self) -> usize {
        DenseMatrix::cols(self)
    }
    fn to_dense(&self) -> DenseMatrix<T> {
        self.clone()
    }
}

impl<T: Scalar> MatrixShape<T> for BlockDiagonalMatrix<T> {
    fn rows(&self) -> usize {
        BlockDiagonalMatrix::rows(self)
    }
    fn cols(&self) -> usize {
        BlockDiagonalMatrix::cols(self)
    }
    fn to_dense(&self) -> DenseMatrix<T> {
        BlockDiagonalMatrix::to_dense(self)
    }
}

impl<T: Scalar> MatrixShape<T> for BandedBlockMatrix<T> {
    fn rows(&self) -> usize {
        BandedBlockMatrix::rows(self)
    }
    fn cols(&self) -> usize {
        BandedBlockMatrix::cols(self)
    }
    fn to_dense(&self) -> DenseMatrix<T> {
        BandedBlockMatrix::to_dense(self)
    }
}

/// A solver for one input structure.
pub trait QrSolver<T: Scalar> {
    type Input: MatrixShape<T>;
    type Factor: QrFactor<T>;

    fn compute(&self, a: &Self::Input) -> Result<Self::Factor>;
}

/// Least-squares solve through any factor.
pub fn solve_least_squares<T: Scalar, F: QrFactor<T> + ?Sized>(
    factor: &F,
    b: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    factor.solve(b)
}

/// Runs `f` on a copy of rows `r0..r0 + nr` of `b` and writes the result back.
pub(crate) fn on_rows<T: Scalar>(
    b: &mut DenseMatrix<T>,
    r0: usize,
    nr: usize,
    f: impl FnOnce(&mut DenseMatrix<T>) -> Result<()>,
) -> Result<()> {
    if r0 == 0 && nr == b.rows() {
        return f(b);
    }
    let mut sub = b.rows_range(r0, nr);
    f(&mut sub)?;
    b.set_submatrix(r0, 0, &sub);
    Ok(())
}

/// A matrix whose structure is chosen at runtime.
#[derive(Clone, Debug)]
pub enum StructuredMatrix<T> {
    Dense(DenseMatrix<T>),
    BlockDiagonal(BlockDiagonalMatrix<T>),
    Banded(BandedBlockMatrix<T>),
    HorzCat(Box<StructuredMatrix<T>>, DenseMatrix<T>),
    VertCat(Box<StructuredMatrix<T>>, Box<StructuredMatrix<T>>),
}

impl<T: Scalar> MatrixShape<T> for StructuredMatrix<T> {
    fn rows(&self) -> usize {
        match self {
            StructuredMatrix::Dense(m) => m.rows(),
            StructuredMatrix::BlockDiagonal(m) => m.rows(),
            StructuredMatrix::Banded(m) => m.rows(),
            StructuredMatrix::HorzCat(l, _) => l.rows(),
            StructuredMatrix::VertCat(t, b) => t.rows() + b.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            StructuredMatrix::Dense(m) => m.cols(),
            StructuredMatrix::BlockDiagonal(m) => m.cols(),
            StructuredMatrix::Banded(m) => m.cols(),
            StructuredMatrix::HorzCat(l, r) => l.cols() + r.cols(),
            StructuredMatrix::VertCat(t, _) => t.cols(),
        }
    }

    fn to_dense(&self) -> DenseMatrix<T> {
        match self {
            StructuredMatrix::Dense(m) => m.clone(),
            StructuredMatrix::BlockDiagonal(m) => m.to_dense(),
            StructuredMatrix::Banded(m) => m.to_dense(),
            StructuredMatrix::HorzCat(l, r) => {
                DenseMatrix::hstack(&l.to_dense(), r).expect("horzcat rows agree")
            }
            StructuredMatrix::VertCat(t, b) => {
                DenseMatrix::vstack(&t.to_dense(), &b.to_dense()).expect("vertcat cols agree")
            }
        }
    }
}

/// Runtime-dispatched solver: picks the structured algorithm per variant.
#[derive(Clone, Copy, Debug)]
pub struct AnyQr {
    pub block_width: usize,
}

impl Default for AnyQr {
    fn default() -> Self {
        Self {
            block_width: DEFAULT_BLOCK_WIDTH,
        }
    }
}

impl<T: Scalar> QrSolver<T> for AnyQr {
    type Input = StructuredMatrix<T>;
    type Factor = Box<dyn QrFactor<T>>;

    fn compute(&self, a: &StructuredMatrix<T>) -> Result<Box<dyn QrFactor<T>>> {
        let dense = DenseQr {
            block_width: self.block_width,
        };
        Ok(match a {
            StructuredMatrix::Dense(m) => Box::new(dense.compute(m)?),
            StructuredMatrix::BlockDiagonal(m) => {
                Box::new(BlockDiagonalQr { block_solver: dense }.compute(m)?)
            }
            StructuredMatrix::Banded(m) => Box::new(
                BlockBandedQr {
                    block_width: self.block_width,
                }
                .compute(m)?,
            ),
            StructuredMatrix::HorzCat(l, r) => Box::new(
                HorzCat {
                    left: *self,
                    right: dense,
                }
                .compute_parts(l, r)?,
            ),
            StructuredMatrix::VertCat(t, b) => Box::new(
                VertCat {
                    top: *self,
                    bottom: *self,
                    block_width: self.block_width,
                }
                .compute_parts(t, b)?,
            ),
        })
    }
}
