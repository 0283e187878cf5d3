use crate::error::{Error, Result};
use crate::householder::{dense_qr_blocked, DenseQrFactor};
use crate::matrix::{gemm, DenseMatrix, TripletMatrix};
use crate::scalar::Scalar;
use crate::structured::{on_rows, DenseQr, MatrixShape, QrFactor, QrSolver};

/// `[A₁ | A₂]` with a structured left part and a dense right part.
#[derive(Clone, Debug)]
pub struct HorzCatMatrix<A, T> {
    pub left: A,
    pub right: DenseMatrix<T>,
}

impl<T: Scalar, A: MatrixShape<T>> MatrixShape<T> for HorzCatMatrix<A, T> {
    fn rows(&self) -> usize {
        self.left.rows()
    }

    fn cols(&self) -> usize {
        self.left.cols() + self.right.cols()
    }

    fn to_dense(&self) -> DenseMatrix<T> {
        DenseMatrix::hstack(&self.left.to_dense(), &self.right).expect("horzcat rows agree")
    }
}

/// QR of `[A₁ | A₂]`: factor `A₁ = Q₁ R₁`, then QR the dense complement
/// `Q⊥₁ᵀ A₂ = Q' R'`.
///
/// ```text
/// R = [ R₁  Q₁ᵀA₂ ]
///     [ 0   R'    ]
/// ```
#[derive(Clone, Copy, Debug, Default)]
pub struct HorzCat<L> {
    pub left: L,
    pub right: DenseQr,
}

#[derive(Debug)]
pub struct HorzCatQrFactor<F, T> {
    left: F,
    top: DenseMatrix<T>,
    right: DenseQrFactor<T>,
}

impl<L> HorzCat<L> {
    pub fn compute_parts<T: Scalar>(
        &self,
        left: &L::Input,
        right: &DenseMatrix<T>,
    ) -> Result<HorzCatQrFactor<L::Factor, T>>
    where
        L: QrSolver<T>,
    {
        let n = left.rows();
        let (m1, m2) = (left.cols(), right.cols());
        if right.rows() != n {
            return Err(Error::dims("horzcat", (n, m1), right.shape()));
        }
        if m1 + m2 > n {
            return Err(Error::Structure {
                block: 0,
                reason: format!("horzcat of {n} rows with {m1} + {m2} columns is landscape"),
            });
        }
        let f1 = self.left.compute(left).map_err(|e| e.context("horzcat left factor"))?;
        let c = f1.q_transpose_apply(right)?;
        let top = c.rows_range(0, m1);
        let bottom = c.rows_range(m1, n - m1);
        let f2 = dense_qr_blocked(bottom, self.right.block_width);
        Ok(HorzCatQrFactor {
            left: f1,
            top,
            right: f2,
        })
    }
}

impl<T, L> QrSolver<T> for HorzCat<L>
where
    T: Scalar,
    L: QrSolver<T>,
{
    type Input = HorzCatMatrix<L::Input, T>;
    type Factor = HorzCatQrFactor<L::Factor, T>;

    fn compute(&self, a: &Self::Input) -> Result<Self::Factor> {
        self.compute_parts(&a.left, &a.right)
    }
}

impl<F, T> HorzCatQrFactor<F, T> {
    pub fn left(&self) -> &F {
        &self.left
    }

    /// `Q₁ᵀ A₂` restricted to the `R₁` rows.
    pub fn top(&self) -> &DenseMatrix<T> {
        &self.top
    }

    /// Dense factor of `Q⊥₁ᵀ A₂`.
    pub fn right(&self) -> &DenseQrFactor<T> {
        &self.right
    }
}

impl<T: Scalar, F: QrFactor<T>> QrFactor<T> for HorzCatQrFactor<F, T> {
    fn rows(&self) -> usize {
        self.left.rows()
    }

    fn cols(&self) -> usize {
        self.left.cols() + self.right.cols()
    }

    fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.left.apply_qt_in_place(b)?;
        let m1 = self.left.cols();
        let h = b.rows() - m1;
        on_rows(b, m1, h, |sub| self.right.apply_qt_in_place(sub))
    }

    fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        if b.rows() != self.rows() {
            return Err(Error::dims("apply_q", (self.rows(), self.cols()), b.shape()));
        }
        let m1 = self.left.cols();
        let h = b.rows() - m1;
        on_rows(b, m1, h, |sub| self.right.apply_q_in_place(sub))?;
        self.left.apply_q_in_place(b)
    }

    fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        let (m1, m2) = (self.left.cols(), self.right.cols());
        if b.rows() != m1 + m2 {
            return Err(Error::dims("solve_r", (m1 + m2, m1 + m2), b.shape()));
        }
        let mut x2 = b.rows_range(m1, m2);
        self.right
            .solve_r_in_place(&mut x2)
            .map_err(|e| shift_singular(e, m1))?;
        let mut rhs1 = b.rows_range(0, m1);
        gemm(-T::one(), &self.top, false, &x2, false, T::one(), &mut rhs1);
        self.left.solve_r_in_place(&mut rhs1)?;
        b.set_submatrix(0, 0, &rhs1);
        b.set_submatrix(m1, 0, &x2);
        Ok(())
    }

    fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        let (m1, m2) = (self.left.cols(), self.right.cols());
        if b.rows() != m1 + m2 {
            return Err(Error::dims("solve_rt", (m1 + m2, m1 + m2), b.shape()));
        }
        let mut y1 = b.rows_range(0, m1);
        self.left.solve_rt_in_place(&mut y1)?;
        let mut rhs2 = b.rows_range(m1, m2);
        gemm(-T::one(), &self.top, true, &y1, false, T::one(), &mut rhs2);
        self.right
            .solve_rt_in_place(&mut rhs2)
            .map_err(|e| shift_singular(e, m1))?;
        b.set_submatrix(0, 0, &y1);
        b.set_submatrix(m1, 0, &rhs2);
        Ok(())
    }

    fn r_triplets(&self) -> TripletMatrix<T> {
        let m1 = self.left.cols();
        let n = self.cols();
        let mut entries = self.left.r_triplets().into_entries();
        for j in 0..self.top.cols() {
            for (i, &v) in self.top.col(j).iter().enumerate() {
                if v != T::zero() {
                    entries.push((i, m1 + j, v));
                }
            }
        }
        let r2 = self.right.r();
        for j in 0..r2.cols() {
            for (i, &v) in r2.col(j).iter().enumerate() {
                if v != T::zero() {
                    entries.push((m1 + i, m1 + j, v));
                }
            }
        }
        TripletMatrix::from_entries(self.rank_rows(), n, entries)
            .expect("horzcat R entries stay inside R")
    }

    fn q_storage(&self) -> usize {
        self.left.q_storage() + self.right.q_storage()
    }
}

fn shift_singular(e: Error, by: usize) -> Error {
    match e {
        Error::Singular { column } => Error::Singular { column: column + by },
        other => other,
    }
}
