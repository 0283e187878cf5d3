use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{BlockDiagonalMatrix, DenseMatrix, TripletMatrix};
use crate::scalar::Scalar;
use crate::structured::{DenseQr, QrFactor, QrSolver};

/// Factors each diagonal block independently (in parallel).
///
/// Every block must be portrait (`rows >= cols`). In `Qᵀ B` the `R` rows of
/// block `k` land at its column offset and its complement rows follow all
/// `R` rows, in block order.
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockDiagonalQr<S = DenseQr> {
    pub block_solver: S,
}

#[derive(Debug)]
pub struct BlockDiagonalQrFactor<F> {
    factors: Vec<F>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

impl<T, S> QrSolver<T> for BlockDiagonalQr<S>
where
    T: Scalar,
    S: QrSolver<T, Input = DenseMatrix<T>> + Sync,
    S::Factor: Send,
{
    type Input = BlockDiagonalMatrix<T>;
    type Factor = BlockDiagonalQrFactor<S::Factor>;

    fn compute(&self, a: &BlockDiagonalMatrix<T>) -> Result<Self::Factor> {
        for (k, b) in a.blocks().iter().enumerate() {
            if b.rows() < b.cols() {
                return Err(Error::LandscapeBlock {
                    block: k,
                    rows: b.rows(),
                    cols: b.cols(),
                });
            }
        }
        let factors = a
            .blocks()
            .par_iter()
            .enumerate()
            .map(|(k, b)| {
                self.block_solver
                    .compute(b)
                    .map_err(|e| e.context(format!("diagonal block {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockDiagonalQrFactor {
            factors,
            row_offsets: a.row_offsets().to_vec(),
            col_offsets: a.col_offsets().to_vec(),
        })
    }
}

impl<F> BlockDiagonalQrFactor<F> {
    pub fn block_factors(&self) -> &[F] {
        &self.factors
    }

    fn n_rows(&self) -> usize {
        *self.row_offsets.last().unwrap_or(&0)
    }

    fn n_cols(&self) -> usize {
        *self.col_offsets.last().unwrap_or(&0)
    }

    /// Output row of row `i` of block `k`'s local `Qᵀ` result.
    fn out_row(&self, k: usize, i: usize) -> usize {
        let m = self.col_offsets[k + 1] - self.col_offsets[k];
        if i < m {
            self.col_offsets[k] + i
        } else {
            self.n_cols() + (self.row_offsets[k] - self.col_offsets[k]) + (i - m)
        }
    }

    /// Applies `op` to every block's rows of `b` in parallel. `in_row` and
    /// `out_row` map (block, local row) to rows of the input and output.
    fn blockwise<T: Scalar>(
        &self,
        b: &DenseMatrix<T>,
        in_row: impl Fn(usize, usize) -> usize + Sync,
        out_row: impl Fn(usize, usize) -> usize,
        op: impl Fn(&F, &mut DenseMatrix<T>) -> Result<()> + Sync,
    ) -> Result<DenseMatrix<T>>
    where
        F: QrFactor<T>,
    {
        let nc = b.cols();
        let locals = (0..self.factors.len())
            .into_par_iter()
            .map(|k| {
                let h = self.row_offsets[k + 1] - self.row_offsets[k];
                let mut local = DenseMatrix::from_fn(h, nc, |i, j| b[(in_row(k, i), j)]);
                op(&self.factors[k], &mut local)?;
                Ok(local)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = DenseMatrix::zeros(b.rows(), nc);
        for (k, local) in locals.iter().enumerate() {
            for j in 0..nc {
                let src = local.col(j);
                let dst = out.col_mut(j);
                for (i, &v) in src.iter().enumerate() {
                    dst[out_row(k, i)] = v;
                }
            }
        }
        Ok(out)
    }

    fn check<T: Scalar>(&self, op: &'static str, b: &DenseMatrix<T>, rows: usize) -> Result<()> {
        if b.rows() != rows {
            return Err(Error::dims(op, (self.n_rows(), self.n_cols()), b.shape()));
        }
        Ok(())
    }
}

impl<T: Scalar, F: QrFactor<T>> QrFactor<T> for BlockDiagonalQrFactor<F> {
    fn rows(&self) -> usize {
        self.n_rows()
    }

    fn cols(&self) -> usize {
        self.n_cols()
    }

    fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("apply_qt", b, self.n_rows())?;
        *b = self.blockwise(
            b,
            |k, i| self.row_offsets[k] + i,
            |k, i| self.out_row(k, i),
            |f, local| f.apply_qt_in_place(local),
        )?;
        Ok(())
    }

    fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("apply_q", b, self.n_rows())?;
        *b = self.blockwise(
            b,
            |k, i| self.out_row(k, i),
            |k, i| self.row_offsets[k] + i,
            |f, local| f.apply_q_in_place(local),
        )?;
        Ok(())
    }

    fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("solve_r", b, self.n_cols())?;
        *b = self.blockwise_square(b, |f, local| f.solve_r_in_place(local))?;
        Ok(())
    }

    fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("solve_rt", b, self.n_cols())?;
        *b = self.blockwise_square(b, |f, local| f.solve_rt_in_place(local))?;
        Ok(())
    }

    fn r_triplets(&self) -> TripletMatrix<T> {
        let mut entries = Vec::new();
        for (k, f) in self.factors.iter().enumerate() {
            let off = self.col_offsets[k];
            for &(i, j, v) in f.r_triplets().entries() {
                entries.push((off + i, off + j, v));
            }
        }
        TripletMatrix::from_entries(self.n_cols(), self.n_cols(), entries)
            .expect("block R entries stay inside the diagonal blocks")
    }

    fn q_storage(&self) -> usize {
        self.factors.iter().map(QrFactor::q_storage).sum()
    }
}

impl<F> BlockDiagonalQrFactor<F> {
    fn blockwise_square<T: Scalar>(
        &self,
        b: &DenseMatrix<T>,
        op: impl Fn(&F, &mut DenseMatrix<T>) -> Result<()> + Sync,
    ) -> Result<DenseMatrix<T>>
    where
        F: QrFactor<T>,
    {
        let nc = b.cols();
        let locals = (0..self.factors.len())
            .into_par_iter()
            .map(|k| {
                let c0 = self.col_offsets[k];
                let m = self.col_offsets[k + 1] - c0;
                let mut local = b.submatrix(c0, 0, m, nc);
                op(&self.factors[k], &mut local).map_err(|e| match e {
                    Error::Singular { column } => Error::Singular { column: c0 + column },
                    other => other,
                })?;
                Ok(local)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = DenseMatrix::zeros(b.rows(), nc);
        for (k, local) in locals.iter().enumerate() {
            out.set_submatrix(self.col_offsets[k], 0, local);
        }
        Ok(out)
    }
}
