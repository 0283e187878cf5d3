//! Block-structured storage: block diagonal and block banded matrices.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, TripletMatrix};
use crate::scalar::Scalar;

/// `blkdiag(A_1, ..., A_K)` with dense blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagonalMatrix<T> {
    blocks: Vec<DenseMatrix<T>>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

impl<T: Scalar> BlockDiagonalMatrix<T> {
    pub fn new(blocks: Vec<DenseMatrix<T>>) -> Self {
        let mut row_offsets = Vec::with_capacity(blocks.len() + 1);
        let mut col_offsets = Vec::with_capacity(blocks.len() + 1);
        let (mut r, mut c) = (0, 0);
        for b in &blocks {
            row_offsets.push(r);
            col_offsets.push(c);
            r += b.rows();
            c += b.cols();
        }
        row_offsets.push(r);
        col_offsets.push(c);
        Self {
            blocks,
            row_offsets,
            col_offsets,
        }
    }

    pub fn blocks(&self) -> &[DenseMatrix<T>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Prefix sums of block row counts (length `K + 1`).
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    /// Prefix sums of block column counts (length `K + 1`).
    pub fn col_offsets(&self) -> &[usize] {
        &self.col_offsets
    }

    pub fn rows(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn cols(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows(), self.cols());
        for (k, b) in self.blocks.iter().enumerate() {
            d.set_submatrix(self.row_offsets[k], self.col_offsets[k], b);
        }
        d
    }

    pub fn to_triplets(&self) -> TripletMatrix<T> {
        let mut entries = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            push_block(&mut entries, b, self.row_offsets[k], self.col_offsets[k]);
        }
        TripletMatrix::from_entries(self.rows(), self.cols(), entries)
            .expect("block offsets are in bounds")
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols() {
            return Err(Error::dims("mul_vec", (self.rows(), self.cols()), (v.len(), 1)));
        }
        let mut out = vec![T::zero(); self.rows()];
        for (k, b) in self.blocks.iter().enumerate() {
            let y = b.mul_vec(&v[self.col_offsets[k]..self.col_offsets[k + 1]])?;
            out[self.row_offsets[k]..self.row_offsets[k + 1]].copy_from_slice(&y);
        }
        Ok(out)
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows() {
            return Err(Error::dims("tr_mul_vec", (self.rows(), self.cols()), (v.len(), 1)));
        }
        let mut out = vec![T::zero(); self.cols()];
        for (k, b) in self.blocks.iter().enumerate() {
            let y = b.tr_mul_vec(&v[self.row_offsets[k]..self.row_offsets[k + 1]])?;
            out[self.col_offsets[k]..self.col_offsets[k + 1]].copy_from_slice(&y);
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> BlockDiagonalMatrix<U> {
        BlockDiagonalMatrix::new(self.blocks.iter().map(|b| b.cast()).collect())
    }
}

/// Dense blocks placed along a band: consecutive blocks share `r_k` columns
/// and occupy disjoint, increasing row ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedBlockMatrix<T> {
    blocks: Vec<DenseMatrix<T>>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    overlaps: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl<T: Scalar> BandedBlockMatrix<T> {
    /// `overlaps[k]` is the number of columns shared by blocks `k` and `k+1`
    /// (length `K - 1`, or empty when `K <= 1`).
    pub fn new(
        blocks: Vec<DenseMatrix<T>>,
        row_offsets: Vec<usize>,
        overlaps: Vec<usize>,
    ) -> Result<Self> {
        let k = blocks.len();
        if row_offsets.len() != k {
            return Err(Error::Structure {
                block: 0,
                reason: format!("{} row offsets for {} blocks", row_offsets.len(), k),
            });
        }
        if overlaps.len() != k.saturating_sub(1) {
            return Err(Error::Structure {
                block: 0,
                reason: format!("{} overlaps for {} blocks", overlaps.len(), k),
            });
        }
        let mut col_offsets = Vec::with_capacity(k);
        let mut c = 0usize;
        for i in 0..k {
            col_offsets.push(c);
            if i + 1 < k {
                let r = overlaps[i];
                let limit = blocks[i].cols().min(blocks[i + 1].cols());
                if r > limit {
                    return Err(Error::Structure {
                        block: i,
                        reason: format!("overlap {r} exceeds min block width {limit}"),
                    });
                }
                c += blocks[i].cols() - r;
                let end = row_offsets[i] + blocks[i].rows();
                if row_offsets[i + 1] < end {
                    return Err(Error::Structure {
                        block: i + 1,
                        reason: format!(
                            "row offset {} overlaps previous block ending at {end}",
                            row_offsets[i + 1]
                        ),
                    });
                }
            }
        }
        let rows = k.checked_sub(1).map_or(0, |l| row_offsets[l] + blocks[l].rows());
        let cols = k.checked_sub(1).map_or(0, |l| col_offsets[l] + blocks[l].cols());
        Ok(Self {
            blocks,
            row_offsets,
            col_offsets,
            overlaps,
            rows,
            cols,
        })
    }

    /// Blocks stacked with no gap between row ranges.
    pub fn stacked(blocks: Vec<DenseMatrix<T>>, overlaps: Vec<usize>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut r = 0;
        for b in &blocks {
            offsets.push(r);
            r += b.rows();
        }
        Self::new(blocks, offsets, overlaps)
    }

    pub fn blocks(&self) -> &[DenseMatrix<T>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_offsets(&self) -> &[usize] {
        &self.col_offsets
    }

    pub fn overlaps(&self) -> &[usize] {
        &self.overlaps
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (k, b) in self.blocks.iter().enumerate() {
            d.set_submatrix(self.row_offsets[k], self.col_offsets[k], b);
        }
        d
    }

    pub fn to_triplets(&self) -> TripletMatrix<T> {
        let mut entries = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            push_block(&mut entries, b, self.row_offsets[k], self.col_offsets[k]);
        }
        TripletMatrix::from_entries(self.rows, self.cols, entries)
            .expect("block offsets are in bounds")
    }

    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::dims("mul_vec", (self.rows, self.cols), (v.len(), 1)));
        }
        let mut out = vec![T::zero(); self.rows];
        for (k, b) in self.blocks.iter().enumerate() {
            let c0 = self.col_offsets[k];
            let y = b.mul_vec(&v[c0..c0 + b.cols()])?;
            let r0 = self.row_offsets[k];
            out[r0..r0 + b.rows()].copy_from_slice(&y);
        }
        Ok(out)
    }

    pub fn tr_mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::dims("tr_mul_vec", (self.rows, self.cols), (v.len(), 1)));
        }
        let mut out = vec![T::zero(); self.cols];
        for (k, b) in self.blocks.iter().enumerate() {
            let r0 = self.row_offsets[k];
            let y = b.tr_mul_vec(&v[r0..r0 + b.rows()])?;
            let c0 = self.col_offsets[k];
            for (o, yi) in out[c0..c0 + b.cols()].iter_mut().zip(y) {
                *o += yi;
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> BandedBlockMatrix<U> {
        BandedBlockMatrix {
            blocks: self.blocks.iter().map(|b| b.cast()).collect(),
            row_offsets: self.row_offsets.clone(),
            col_offsets: self.col_offsets.clone(),
            overlaps: self.overlaps.clone(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn push_block<T: Scalar>(
    entries: &mut Vec<(usize, usize, T)>,
    b: &DenseMatrix<T>,
    r0: usize,
    c0: usize,
) {
    for j in 0..b.cols() {
        for (i, &v) in b.col(j).iter().enumerate() {
            if v != T::zero() {
                entries.push((r0 + i, c0 + j, v));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diagonal_densifies() {
        let a = BlockDiagonalMatrix::new(vec![
            DenseMatrix::<f64>::from_rows_f64(&[[1.0]]).unwrap(),
            DenseMatrix::from_rows_f64(&[[2.0]]).unwrap(),
        ]);
        assert_eq!(
            a.to_dense(),
            DenseMatrix::from_rows_f64(&[[1.0, 0.0], [0.0, 2.0]]).unwrap()
        );
        assert_eq!(a.to_triplets().to_dense(), a.to_dense());
    }

    #[test]
    fn banded_two_blocks_share_one_column() {
        let b0 = DenseMatrix::<f64>::from_rows_f64(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b1 = DenseMatrix::from_rows_f64(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let a = BandedBlockMatrix::stacked(vec![b0, b1], vec![1]).unwrap();
        assert_eq!((a.rows(), a.cols()), (4, 3));
        // Hand-placed: block 1 starts in column 1.
        let expected = DenseMatrix::from_rows_f64(&[
            [1.0, 2.0, 0.0],
            [3.0, 4.0, 0.0],
            [0.0, 5.0, 6.0],
            [0.0, 7.0, 8.0],
        ])
        .unwrap();
        assert_eq!(a.to_dense(), expected);
    }

    #[test]
    fn overlap_too_large_is_structural_error() {
        let b0 = DenseMatrix::<f64>::zeros(3, 2);
        let b1 = DenseMatrix::zeros(3, 1);
        let err = BandedBlockMatrix::stacked(vec![b0, b1], vec![2]).unwrap_err();
        assert!(matches!(err, Error::Structure { block: 0, .. }));
    }

    #[test]
    fn overlapping_rows_rejected() {
        let b = DenseMatrix::<f64>::zeros(3, 2);
        let err = BandedBlockMatrix::new(vec![b.clone(), b], vec![0, 2], vec![0]).unwrap_err();
        assert!(matches!(err, Error::Structure { block: 1, .. }));
    }

    #[test]
    fn banded_products_match_dense() {
        let b0 = DenseMatrix::<f64>::from_fn(3, 2, |i, j| (i + 2 * j) as f64 + 1.0);
        let b1 = DenseMatrix::from_fn(2, 3, |i, j| (3 * i + j) as f64 - 2.0);
        let a = BandedBlockMatrix::stacked(vec![b0, b1], vec![1]).unwrap();
        let d = a.to_dense();
        let v = vec![1.0, -2.0, 0.5, 3.0];
        assert_eq!(a.mul_vec(&v).unwrap(), d.mul_vec(&v).unwrap());
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(a.tr_mul_vec(&w).unwrap(), d.tr_mul_vec(&w).unwrap());
    }
}
