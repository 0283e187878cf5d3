use crate::error::Result;
use crate::householder::{dense_qr_blocked, DenseQrFactor, DEFAULT_BLOCK_WIDTH};
use crate::matrix::{DenseMatrix, TripletMatrix};
use crate::scalar::Scalar;
use crate::structured::{QrFactor, QrSolver};

/// Unstructured Householder QR; also the in-repo dense baseline.
#[derive(Clone, Copy, Debug)]
pub struct DenseQr {
    pub block_width: usize,
}

impl Default for DenseQr {
    fn default() -> Self {
        Self {
            block_width: DEFAULT_BLOCK_WIDTH,
        }
    }
}

impl<T: Scalar> QrSolver<T> for DenseQr {
    type Input = DenseMatrix<T>;
    type Factor = DenseQrFactor<T>;

    fn compute(&self, a: &DenseMatrix<T>) -> Result<DenseQrFactor<T>> {
        Ok(dense_qr_blocked(a.clone(), self.block_width))
    }
}

impl<T: Scalar> QrFactor<T> for DenseQrFactor<T> {
    fn rows(&self) -> usize {
        DenseQrFactor::rows(self)
    }

    fn cols(&self) -> usize {
        DenseQrFactor::cols(self)
    }

    fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        DenseQrFactor::apply_qt_in_place(self, b)
    }

    fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        DenseQrFactor::apply_q_in_place(self, b)
    }

    fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        DenseQrFactor::solve_r_in_place(self, b)
    }

    fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        DenseQrFactor::solve_rt_in_place(self, b)
    }

    fn r_triplets(&self) -> TripletMatrix<T> {
        TripletMatrix::from_dense(&self.r())
    }

    fn q_storage(&self) -> usize {
        DenseQrFactor::q_storage(self)
    }
}
