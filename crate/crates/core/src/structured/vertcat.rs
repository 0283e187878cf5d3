use crate::error::{Error, Result};
use crate::householder::DEFAULT_BLOCK_WIDTH;
use crate::matrix::{BandedBlockMatrix, DenseMatrix, Permutation, RowPermute, TripletMatrix};
use crate::ordering::first_column_permutation;
use crate::scalar::Scalar;
use crate::structured::{BlockBandedQr, BlockBandedQrFactor, MatrixShape, QrFactor, QrSolver};

/// `[A₁; A₂]` with independently structured parts.
#[derive(Clone, Debug)]
pub struct VertCatMatrix<A1, A2> {
    pub top: A1,
    pub bottom: A2,
}

impl<T: Scalar, A1: MatrixShape<T>, A2: MatrixShape<T>> MatrixShape<T> for VertCatMatrix<A1, A2> {
    fn rows(&self) -> usize {
        self.top.rows() + self.bottom.rows()
    }

    fn cols(&self) -> usize {
        self.top.cols()
    }

    fn to_dense(&self) -> DenseMatrix<T> {
        DenseMatrix::vstack(&self.top.to_dense(), &self.bottom.to_dense())
            .expect("vertcat cols agree")
    }
}

/// QR of `[A₁; A₂]`: factor both parts, interleave the rows of `[R₁; R₂]`
/// into a banded pattern `P [R₁; R₂]`, and factor that with
/// [`BlockBandedQr`].
///
/// `Qᵀ B` is ordered as `[R₃ rows; Q⊥₃ rows; Q⊥₁ rows; Q⊥₂ rows]`.
#[derive(Clone, Copy, Debug)]
pub struct VertCat<S1, S2> {
    pub top: S1,
    pub bottom: S2,
    /// Column width used both to cut banded blocks and for the WY blocks.
    pub block_width: usize,
}

impl<S1: Default, S2: Default> Default for VertCat<S1, S2> {
    fn default() -> Self {
        Self {
            top: S1::default(),
            bottom: S2::default(),
            block_width: DEFAULT_BLOCK_WIDTH,
        }
    }
}

#[derive(Debug)]
pub struct VertCatQrFactor<F1, F2, T> {
    top: F1,
    bottom: F2,
    interleave: Permutation,
    banded: BlockBandedQrFactor<T>,
}

impl<S1, S2> VertCat<S1, S2> {
    pub fn compute_parts<T: Scalar>(
        &self,
        top: &S1::Input,
        bottom: &S2::Input,
    ) -> Result<VertCatQrFactor<S1::Factor, S2::Factor, T>>
    where
        S1: QrSolver<T>,
        S2: QrSolver<T>,
    {
        let m = top.cols();
        if bottom.cols() != m {
            return Err(Error::dims(
                "vertcat",
                (top.rows(), m),
                (bottom.rows(), bottom.cols()),
            ));
        }
        let f1 = self.top.compute(top).map_err(|e| e.context("vertcat top factor"))?;
        let f2 = self
            .bottom
            .compute(bottom)
            .map_err(|e| e.context("vertcat bottom factor"))?;
        let (k1, k2) = (f1.rank_rows(), f2.rank_rows());
        let mut entries = f1.r_triplets().into_entries();
        entries.extend(f2.r_triplets().into_entries().into_iter().map(|(i, j, v)| (k1 + i, j, v)));
        let stacked = TripletMatrix::from_entries(k1 + k2, m, entries)?;
        let interleave = first_column_permutation(&stacked);
        let sorted = stacked.permute_rows(&interleave)?;
        let banded = banded_from_sorted_rows(&sorted, self.block_width)?;
        let banded = BlockBandedQr {
            block_width: self.block_width,
        }
        .compute(&banded)
        .map_err(|e| e.context("vertcat banded refactorization"))?;
        Ok(VertCatQrFactor {
            top: f1,
            bottom: f2,
            interleave,
            banded,
        })
    }
}

impl<T, S1, S2> QrSolver<T> for VertCat<S1, S2>
where
    T: Scalar,
    S1: QrSolver<T>,
    S2: QrSolver<T>,
{
    type Input = VertCatMatrix<S1::Input, S2::Input>;
    type Factor = VertCatQrFactor<S1::Factor, S2::Factor, T>;

    fn compute(&self, a: &Self::Input) -> Result<Self::Factor> {
        self.compute_parts(&a.top, &a.bottom)
    }
}

impl<F1, F2, T> VertCatQrFactor<F1, F2, T> {
    pub fn top(&self) -> &F1 {
        &self.top
    }

    pub fn bottom(&self) -> &F2 {
        &self.bottom
    }

    /// Row permutation applied to `[R₁; R₂]`.
    pub fn interleave(&self) -> &Permutation {
        &self.interleave
    }

    pub fn banded(&self) -> &BlockBandedQrFactor<T> {
        &self.banded
    }
}

impl<T: Scalar, F1: QrFactor<T>, F2: QrFactor<T>> QrFactor<T> for VertCatQrFactor<F1, F2, T> {
    fn rows(&self) -> usize {
        self.top.rows() + self.bottom.rows()
    }

    fn cols(&self) -> usize {
        self.top.cols()
    }

    fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        if b.rows() != self.rows() {
            return Err(Error::dims("apply_qt", (self.rows(), self.cols()), b.shape()));
        }
        let (n1, n2) = (self.top.rows(), self.bottom.rows());
        let (k1, k2) = (self.top.rank_rows(), self.bottom.rank_rows());
        let mut b1 = b.rows_range(0, n1);
        let mut b2 = b.rows_range(n1, n2);
        self.top.apply_qt_in_place(&mut b1)?;
        self.bottom.apply_qt_in_place(&mut b2)?;
        let stacked = DenseMatrix::vstack(&b1.rows_range(0, k1), &b2.rows_range(0, k2))?;
        let mut s = stacked.permute_rows(&self.interleave)?;
        self.banded.apply_qt_in_place(&mut s)?;
        b.set_submatrix(0, 0, &s);
        b.set_submatrix(k1 + k2, 0, &b1.rows_range(k1, n1 - k1));
        b.set_submatrix(k1 + k2 + n1 - k1, 0, &b2.rows_range(k2, n2 - k2));
        Ok(())
    }

    fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        if b.rows() != self.rows() {
            return Err(Error::dims("apply_q", (self.rows(), self.cols()), b.shape()));
        }
        let (n1, n2) = (self.top.rows(), self.bottom.rows());
        let (k1, k2) = (self.top.rank_rows(), self.bottom.rank_rows());
        let mut s = b.rows_range(0, k1 + k2);
        self.banded.apply_q_in_place(&mut s)?;
        let s = s.permute_rows(&self.interleave.inverse())?;
        let mut b1 = DenseMatrix::vstack(&s.rows_range(0, k1), &b.rows_range(k1 + k2, n1 - k1))?;
        let mut b2 = DenseMatrix::vstack(
            &s.rows_range(k1, k2),
            &b.rows_range(k1 + k2 + n1 - k1, n2 - k2),
        )?;
        self.top.apply_q_in_place(&mut b1)?;
        self.bottom.apply_q_in_place(&mut b2)?;
        b.set_submatrix(0, 0, &b1);
        b.set_submatrix(n1, 0, &b2);
        Ok(())
    }

    fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.banded.solve_r_in_place(b)
    }

    fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.banded.solve_rt_in_place(b)
    }

    fn r_triplets(&self) -> TripletMatrix<T> {
        let r = self.banded.r_triplets();
        // The banded factor's R has `cols` rows; trim to min(rows, cols).
        if self.rank_rows() == r.rows() {
            r
        } else {
            let rows = self.rank_rows();
            TripletMatrix::from_entries(
                rows,
                r.cols(),
                r.into_entries().into_iter().filter(|&(i, _, _)| i < rows).collect(),
            )
            .expect("trimmed rows are in range")
        }
    }

    fn q_storage(&self) -> usize {
        self.top.q_storage() + self.bottom.q_storage() + self.banded.q_storage()
    }
}

/// Splits a matrix whose rows are sorted by first nonzero column into a
/// [`BandedBlockMatrix`].
///
/// A new block starts at the first row whose leading column reaches
/// `c₀ + width`, where `c₀` is the current block's first column. Each block
/// spans the columns reached by its rows, extended to cover the previous
/// block's reach so that consecutive overlaps are valid. All-zero rows
/// (sorted last) join the final block, which is extended to the last column.
pub fn banded_from_sorted_rows<T: Scalar>(
    t: &TripletMatrix<T>,
    width: usize,
) -> Result<BandedBlockMatrix<T>> {
    let width = width.max(1);
    let (nrows, ncols) = (t.rows(), t.cols());
    let spans = t.row_spans();
    // (first row, first col, column end)
    let mut cuts: Vec<(usize, usize, usize)> = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        let Some((f, l)) = *span else { continue };
        match cuts.last_mut() {
            None => cuts.push((i, 0, l + 1)),
            Some(cur) => {
                if f < cur.1 {
                    return Err(Error::Structure {
                        block: cuts.len() - 1,
                        reason: format!("row {i} starts at column {f}, before its block"),
                    });
                }
                if f >= cur.1 + width {
                    let c0 = f.min(cur.2);
                    let end = cur.2.max(l + 1);
                    cuts.push((i, c0, end));
                } else {
                    cur.2 = cur.2.max(l + 1);
                }
            }
        }
    }
    if cuts.is_empty() {
        cuts.push((0, 0, ncols));
    }
    if let Some(last) = cuts.last_mut() {
        last.2 = ncols;
    }
    // Row 0 starts the first block even if it is zero.
    cuts[0].0 = 0;

    let nb = cuts.len();
    let mut row_block = vec![0usize; nrows];
    for (k, &(r0, _, _)) in cuts.iter().enumerate() {
        let r1 = if k + 1 < nb { cuts[k + 1].0 } else { nrows };
        row_block[r0..r1].fill(k);
    }
    let mut blocks: Vec<DenseMatrix<T>> = cuts
        .iter()
        .enumerate()
        .map(|(k, &(r0, c0, c1))| {
            let r1 = if k + 1 < nb { cuts[k + 1].0 } else { nrows };
            DenseMatrix::zeros(r1 - r0, c1 - c0)
        })
        .collect();
    for &(i, j, v) in t.entries() {
        let k = row_block[i];
        let (r0, c0, c1) = cuts[k];
        if j < c0 || j >= c1 {
            return Err(Error::Structure {
                block: k,
                reason: format!("entry ({i}, {j}) outside block columns {c0}..{c1}"),
            });
        }
        let blk = &mut blocks[k];
        let idx = (j - c0) * blk.rows() + (i - r0);
        blk.as_mut_slice()[idx] += v;
    }
    let overlaps: Vec<usize> = (1..nb).map(|k| cuts[k - 1].2 - cuts[k].1).collect();
    let row_offsets: Vec<usize> = cuts.iter().map(|c| c.0).collect();
    BandedBlockMatrix::new(blocks, row_offsets, overlaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structured::DenseQr;

    #[test]
    fn bidiagonal_over_diagonal_interleaves() {
        let mut r1 = DenseMatrix::<f64>::zeros(3, 3);
        let mut r2 = DenseMatrix::<f64>::zeros(3, 3);
        for i in 0..3 {
            r1.col_mut(i)[i] = 2.0;
            if i + 1 < 3 {
                r1.col_mut(i + 1)[i] = 1.0;
            }
            r2.col_mut(i)[i] = 0.5;
        }
        let f = VertCat::<DenseQr, DenseQr>::default()
            .compute(&VertCatMatrix { top: r1.clone(), bottom: r2.clone() })
            .unwrap();
        assert_eq!(f.interleave().order(), vec![0, 3, 1, 4, 2, 5]);
        let a = DenseMatrix::vstack(&r1, &r2).unwrap();
        let x = f.solve(&DenseMatrix::from_fn(6, 1, |i, _| i as f64)).unwrap();
        let oracle = crate::householder::dense_qr(&a)
            .solve_least_squares(&DenseMatrix::from_fn(6, 1, |i, _| i as f64))
            .unwrap();
        assert!(x.sub(&oracle).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn cuts_blocks_by_leading_column() {
        let mut t = TripletMatrix::<f64>::new(8, 4);
        for i in 0..4 {
            t.push(2 * i, i, 1.0).unwrap();
            if i + 1 < 4 {
                t.push(2 * i, i + 1, 1.0).unwrap();
            }
            t.push(2 * i + 1, i, 1.0).unwrap();
        }
        let b = banded_from_sorted_rows(&t, 2).unwrap();
        assert_eq!(b.num_blocks(), 2);
        assert_eq!(b.col_offsets(), &[0, 2]);
        assert_eq!(b.overlaps(), &[1]);
        assert_eq!(b.to_dense(), t.to_dense());
    }

    #[test]
    fn column_mismatch_is_rejected() {
        let r = VertCat::<DenseQr, DenseQr>::default().compute(&VertCatMatrix {
            top: DenseMatrix::<f64>::zeros(3, 2),
            bottom: DenseMatrix::zeros(3, 3),
        });
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
