use crate::error::{Error, Result};
use crate::householder::{
    dense_qr_blocked, solve_upper_in_place, solve_upper_transpose_in_place, wy_accumulate,
    CompressedWyBlock, DEFAULT_BLOCK_WIDTH,
};
use crate::matrix::{gemm, BandedBlockMatrix, DenseMatrix, TripletMatrix};
use crate::scalar::Scalar;
use crate::structured::{QrFactor, QrSolver};

/// QR of a block-banded matrix by a sliding window.
///
/// Window `k` holds the rows carried over from window `k - 1` (nonzero only
/// in the shared columns) stacked on the rows of block `k`. After its QR the
/// first `m_k - r_k` rows are final rows of `R`, the next rows (at most
/// `r_k`) are carried into window `k + 1`, and the rest belong to `Q⊥`.
/// Each window's reflectors are kept as compressed WY blocks of at most
/// `block_width` reflectors; `Q` is never formed.
#[derive(Clone, Copy, Debug)]
pub struct BlockBandedQr {
    pub block_width: usize,
}

impl Default for BlockBandedQr {
    fn default() -> Self {
        Self {
            block_width: DEFAULT_BLOCK_WIDTH,
        }
    }
}

#[derive(Clone, Debug)]
struct Window<T> {
    /// Working rows touched by this window, in window order.
    slots: Vec<usize>,
    wy: Vec<CompressedWyBlock<T>>,
}

#[derive(Clone, Debug)]
pub struct BlockBandedQrFactor<T> {
    rows: usize,
    cols: usize,
    windows: Vec<Window<T>>,
    /// Output row of `Qᵀ B` for every working row.
    out_row: Vec<usize>,
    /// Columns eliminated by each window.
    eliminated: Vec<usize>,
    r: BandedBlockMatrix<T>,
}

impl<T: Scalar> QrSolver<T> for BlockBandedQr {
    type Input = BandedBlockMatrix<T>;
    type Factor = BlockBandedQrFactor<T>;

    fn compute(&self, a: &BandedBlockMatrix<T>) -> Result<BlockBandedQrFactor<T>> {
        let (rows, cols) = (a.rows(), a.cols());
        let nb = a.num_blocks();
        let bw = self.block_width.max(1);
        let mut out_row = vec![usize::MAX; rows];
        let mut next_perp = cols;
        let mut covered = 0;

        let mut carried_slots: Vec<usize> = Vec::new();
        let mut carried = DenseMatrix::<T>::zeros(0, 0);
        let mut windows = Vec::with_capacity(nb);
        let mut eliminated = Vec::with_capacity(nb);
        let mut r_blocks = Vec::with_capacity(nb);

        for k in 0..nb {
            let block = &a.blocks()[k];
            let row0 = a.row_offsets()[k];
            // Rows between blocks are zero and go straight to Q⊥.
            for slot in covered..row0 {
                out_row[slot] = next_perp;
                next_perp += 1;
            }
            covered = row0 + block.rows();

            let m = block.cols();
            let last = k + 1 == nb;
            let overlap = if last { 0 } else { a.overlaps()[k] };
            let e = m - overlap;
            let c = carried_slots.len();
            let w = c + block.rows();
            let needed = if last { m } else { e };
            if w < needed {
                return Err(Error::Structure {
                    block: k,
                    reason: format!("window has {w} rows but must eliminate {needed} columns"),
                });
            }

            let mut win = DenseMatrix::zeros(w, m);
            win.set_submatrix(0, 0, &carried);
            win.set_submatrix(c, 0, block);
            let mut slots = carried_slots;
            slots.extend(row0..row0 + block.rows());

            let f = dense_qr_blocked(win, bw);
            let p = f.num_reflectors();
            let wy = if f.wy_blocks().is_empty() {
                let mut v = Vec::new();
                let mut s = 0;
                while s < p {
                    let width = bw.min(p - s);
                    v.push(wy_accumulate(&f, s, width)?);
                    s += width;
                }
                v
            } else {
                f.wy_blocks().to_vec()
            };
            let r_full = f.r();

            let c0 = a.col_offsets()[k];
            for (i, &slot) in slots[..e].iter().enumerate() {
                out_row[slot] = c0 + i;
            }
            for &slot in &slots[p..] {
                out_row[slot] = next_perp;
                next_perp += 1;
            }
            if last {
                carried_slots = Vec::new();
                carried = DenseMatrix::zeros(0, 0);
            } else {
                carried_slots = slots[e..p].to_vec();
                carried = r_full.submatrix(e, e, p - e, overlap);
            }
            r_blocks.push(r_full.rows_range(0, e));
            eliminated.push(e);
            windows.push(Window { slots, wy });
        }
        debug_assert_eq!(next_perp, rows);

        let r_offsets: Vec<usize> = a.col_offsets().to_vec();
        let r = BandedBlockMatrix::new(r_blocks, r_offsets, a.overlaps().to_vec())?;
        Ok(BlockBandedQrFactor {
            rows,
            cols,
            windows,
            out_row,
            eliminated,
            r,
        })
    }
}

impl<T: Scalar> BlockBandedQrFactor<T> {
    /// `R` in banded block form; block `k` is `(m_k - r_k) x m_k`.
    pub fn r_banded(&self) -> &BandedBlockMatrix<T> {
        &self.r
    }

    /// Total number of compressed WY blocks.
    pub fn num_wy_blocks(&self) -> usize {
        self.windows.iter().map(|w| w.wy.len()).sum()
    }

    fn check(&self, op: &'static str, b: &DenseMatrix<T>, rows: usize) -> Result<()> {
        if b.rows() != rows {
            return Err(Error::dims(op, (self.rows, self.cols), b.shape()));
        }
        Ok(())
    }
}

fn gather<T: Scalar>(b: &DenseMatrix<T>, slots: &[usize]) -> DenseMatrix<T> {
    let mut out = DenseMatrix::zeros(slots.len(), b.cols());
    for j in 0..b.cols() {
        let src = b.col(j);
        for (dst, &s) in out.col_mut(j).iter_mut().zip(slots) {
            *dst = src[s];
        }
    }
    out
}

fn scatter<T: Scalar>(b: &mut DenseMatrix<T>, slots: &[usize], local: &DenseMatrix<T>) {
    for j in 0..b.cols() {
        let dst = b.col_mut(j);
        for (&v, &s) in local.col(j).iter().zip(slots) {
            dst[s] = v;
        }
    }
}

impl<T: Scalar> QrFactor<T> for BlockBandedQrFactor<T> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("apply_qt", b, self.rows)?;
        for win in &self.windows {
            let mut local = gather(b, &win.slots);
            for blk in &win.wy {
                blk.apply(&mut local, true);
            }
            scatter(b, &win.slots, &local);
        }
        let mut out = DenseMatrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let src = b.col(j);
            let dst = out.col_mut(j);
            for (s, &o) in self.out_row.iter().enumerate() {
                dst[o] = src[s];
            }
        }
        *b = out;
        Ok(())
    }

    fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("apply_q", b, self.rows)?;
        let mut work = DenseMatrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let src = b.col(j);
            let dst = work.col_mut(j);
            for (s, &o) in self.out_row.iter().enumerate() {
                dst[s] = src[o];
            }
        }
        for win in self.windows.iter().rev() {
            let mut local = gather(&work, &win.slots);
            for blk in win.wy.iter().rev() {
                blk.apply(&mut local, false);
            }
            scatter(&mut work, &win.slots, &local);
        }
        *b = work;
        Ok(())
    }

    fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("solve_r", b, self.cols)?;
        let nc = b.cols();
        for k in (0..self.r.num_blocks()).rev() {
            let blk = &self.r.blocks()[k];
            let c0 = self.r.col_offsets()[k];
            let (e, m) = (self.eliminated[k], blk.cols());
            let mut rhs = b.submatrix(c0, 0, e, nc);
            if m > e {
                let tail = blk.submatrix(0, e, e, m - e);
                let x_tail = b.submatrix(c0 + e, 0, m - e, nc);
                gemm(-T::one(), &tail, false, &x_tail, false, T::one(), &mut rhs);
            }
            solve_upper_in_place(blk, e, &mut rhs).map_err(|err| shift(err, c0))?;
            b.set_submatrix(c0, 0, &rhs);
        }
        Ok(())
    }

    fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check("solve_rt", b, self.cols)?;
        let nc = b.cols();
        // `b` accumulates the right-hand side minus contributions of solved rows.
        for k in 0..self.r.num_blocks() {
            let blk = &self.r.blocks()[k];
            let c0 = self.r.col_offsets()[k];
            let (e, m) = (self.eliminated[k], blk.cols());
            let mut y = b.submatrix(c0, 0, e, nc);
            solve_upper_transpose_in_place(blk, e, &mut y).map_err(|err| shift(err, c0))?;
            b.set_submatrix(c0, 0, &y);
            if m > e {
                let tail = blk.submatrix(0, e, e, m - e);
                let mut rest = b.submatrix(c0 + e, 0, m - e, nc);
                gemm(-T::one(), &tail, true, &y, false, T::one(), &mut rest);
                b.set_submatrix(c0 + e, 0, &rest);
            }
        }
        Ok(())
    }

    fn r_triplets(&self) -> TripletMatrix<T> {
        self.r.to_triplets()
    }

    fn q_storage(&self) -> usize {
        self.windows
            .iter()
            .flat_map(|w| w.wy.iter())
            .map(CompressedWyBlock::storage)
            .sum()
    }
}

fn shift(e: Error, by: usize) -> Error {
    match e {
        Error::Singular { column } => Error::Singular { column: column + by },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::householder::dense_qr;
    use crate::structured::{BlockDiagonalQr, DenseQr};
    use crate::matrix::BlockDiagonalMatrix;

    fn block(rows: usize, cols: usize, seed: usize) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(rows, cols, |i, j| {
            (((i * 7 + j * 13 + seed * 31) % 17) as f64 - 8.0) / 4.0 + if i == j { 3.0 } else { 0.0 }
        })
    }

    #[test]
    fn zero_overlap_matches_block_diagonal() {
        let blocks = vec![block(4, 2, 0), block(3, 3, 1), block(5, 2, 2)];
        let banded = BandedBlockMatrix::stacked(blocks.clone(), vec![0, 0]).unwrap();
        let bd = BlockDiagonalMatrix::new(blocks);
        let fb = BlockBandedQr::default().compute(&banded).unwrap();
        let fd = BlockDiagonalQr::<DenseQr>::default().compute(&bd).unwrap();
        let (rb, rd) = (fb.matrix_r(), fd.matrix_r());
        assert!(rb.sub(&rd).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn two_blocks_sharing_a_column() {
        let a = BandedBlockMatrix::stacked(vec![block(3, 2, 3), block(3, 2, 4)], vec![1]).unwrap();
        let f = BlockBandedQr::default().compute(&a).unwrap();
        let r = f.matrix_r();
        let oracle = dense_qr(&a.to_dense()).r();
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[(i, j)].abs() - oracle[(i, j)].abs()).abs() < 1e-12);
            }
        }
        assert!(f.r_triplets().bandwidth() <= 3);
    }

    #[test]
    fn too_few_rows_is_a_structural_error() {
        let a = BandedBlockMatrix::stacked(vec![block(1, 3, 0), block(4, 3, 1)], vec![1]).unwrap();
        assert!(matches!(
            BlockBandedQr::default().compute(&a),
            Err(Error::Structure { block: 0, .. })
        ));
    }

    #[test]
    fn gap_rows_become_complement_rows() {
        let a = BandedBlockMatrix::new(vec![block(2, 2, 0), block(3, 2, 1)], vec![1, 4], vec![1]).unwrap();
        let f = BlockBandedQr::default().compute(&a).unwrap();
        let d = a.to_dense();
        let qta = f.q_transpose_apply(&d).unwrap();
        for i in a.cols()..a.rows() {
            for j in 0..a.cols() {
                assert!(qta[(i, j)].abs() < 1e-12);
            }
        }
        let back = f.q_apply(&qta).unwrap();
        assert!(back.sub(&d).unwrap().max_abs() < 1e-12);
    }
}
