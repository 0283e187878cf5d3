use crate::error::{Error, Result};
use crate::matrix::{BandedBlockMatrix, BlockDiagonalMatrix, DenseMatrix, TripletMatrix};
use crate::scalar::Scalar;

/// A Jacobian in one of the structures the solvers exploit.
#[derive(Clone, Debug)]
pub enum Jacobian<T> {
    Dense(DenseMatrix<T>),
    /// `[left | right]`: block diagonal latent part, dense global part.
    BlockAngular {
        left: BlockDiagonalMatrix<T>,
        right: DenseMatrix<T>,
    },
    Banded(BandedBlockMatrix<T>),
}

impl<T: Scalar> Jacobian<T> {
    pub fn rows(&self) -> usize {
        match self {
            Jacobian::Dense(d) => d.rows(),
            Jacobian::BlockAngular { left, .. } => left.rows(),
            Jacobian::Banded(b) => b.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Jacobian::Dense(d) => d.cols(),
            Jacobian::BlockAngular { left, right } => left.cols() + right.cols(),
            Jacobian::Banded(b) => b.cols(),
        }
    }

    /// Checks internal consistency (matching row counts of both parts).
    pub fn validate(&self) -> Result<()> {
        if let Jacobian::BlockAngular { left, right } = self {
            if left.rows() != right.rows() {
                return Err(Error::dims("block-angular jacobian", (left.rows(), left.cols()), right.shape()));
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        match self {
            Jacobian::Dense(d) => d.clone(),
            Jacobian::BlockAngular { left, right } => {
                DenseMatrix::hstack(&left.to_dense(), right).expect("parts share rows")
            }
            Jacobian::Banded(b) => b.to_dense(),
        }
    }

    pub fn to_triplets(&self) -> TripletMatrix<T> {
        match self {
            Jacobian::Dense(d) => TripletMatrix::from_dense(d),
            Jacobian::BlockAngular { left, right } => {
                let m1 = left.cols();
                let mut entries = left.to_triplets().into_entries();
                for j in 0..right.cols() {
                    for (i, &v) in right.col(j).iter().enumerate() {
                        if v != T::zero() {
                            entries.push((i, m1 + j, v));
                        }
                    }
                }
                TripletMatrix::from_entries(left.rows(), m1 + right.cols(), entries)
                    .expect("entries are in range")
            }
            Jacobian::Banded(b) => b.to_triplets(),
        }
    }

    /// `J v`.
    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        match self {
            Jacobian::Dense(d) => d.mul_vec(v),
            Jacobian::BlockAngular { left, right } => {
                if v.len() != self.cols() {
                    return Err(Error::dims("mul_vec", (self.rows(), self.cols()), (v.len(), 1)));
                }
                let m1 = left.cols();
                let mut out = left.mul_vec(&v[..m1])?;
                let r = right.mul_vec(&v[m1..])?;
                for (o, ri) in out.iter_mut().zip(r) {
                    *o += ri;
                }
                Ok(out)
            }
            Jacobian::Banded(b) => b.mul_vec(v),
        }
    }

    /// `Jᵀ v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        match self {
            Jacobian::Dense(d) => d.tr_mul_vec(v),
            Jacobian::BlockAngular { left, right } => {
                let mut out = left.tr_mul_vec(v)?;
                out.extend(right.tr_mul_vec(v)?);
                Ok(out)
            }
            Jacobian::Banded(b) => b.tr_mul_vec(v),
        }
    }

    /// Squared column norms, i.e. `diag(JᵀJ)`.
    pub fn column_sq_norms(&self) -> Vec<T> {
        let sq = |d: &DenseMatrix<T>| -> Vec<T> {
            (0..d.cols())
                .map(|j| d.col(j).iter().fold(T::zero(), |s, &v| s + v * v))
                .collect()
        };
        match self {
            Jacobian::Dense(d) => sq(d),
            Jacobian::BlockAngular { left, right } => {
                let mut out: Vec<T> = left.blocks().iter().flat_map(sq).collect();
                out.extend(sq(right));
                out
            }
            Jacobian::Banded(b) => {
                let mut out = vec![T::zero(); b.cols()];
                for (k, blk) in b.blocks().iter().enumerate() {
                    let c0 = b.col_offsets()[k];
                    for (o, s) in out[c0..].iter_mut().zip(sq(blk)) {
                        *o += s;
                    }
                }
                out
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Jacobian<U> {
        match self {
            Jacobian::Dense(d) => Jacobian::Dense(d.cast()),
            Jacobian::BlockAngular { left, right } => Jacobian::BlockAngular {
                left: left.cast(),
                right: right.cast(),
            },
            Jacobian::Banded(b) => Jacobian::Banded(b.cast()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angular() -> Jacobian<f64> {
        Jacobian::BlockAngular {
            left: BlockDiagonalMatrix::new(vec![
                DenseMatrix::from_rows_f64(&[[1.0], [2.0]]).unwrap(),
                DenseMatrix::from_rows_f64(&[[3.0], [4.0]]).unwrap(),
            ]),
            right: DenseMatrix::from_fn(4, 2, |i, j| (i + 3 * j) as f64),
        }
    }

    #[test]
    fn products_match_dense() {
        let j = angular();
        let d = j.to_dense();
        let v = [1.0, -1.0, 0.5, 2.0];
        assert_eq!(j.mul_vec(&v).unwrap(), d.mul_vec(&v).unwrap());
        let w = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(j.tr_mul_vec(&w).unwrap(), d.tr_mul_vec(&w).unwrap());
        assert_eq!(j.to_triplets().to_dense(), d);
    }

    #[test]
    fn column_norms() {
        let j = angular();
        let n = j.column_sq_norms();
        assert_eq!(n[0], 5.0);
        assert_eq!(n[1], 25.0);
        assert_eq!(n[2], 0.0 + 1.0 + 4.0 + 9.0);
        let banded = Jacobian::Banded(
            BandedBlockMatrix::stacked(
                vec![DenseMatrix::from_fn(2, 2, |_, _| 1.0), DenseMatrix::from_fn(2, 2, |_, _| 2.0)],
                vec![1],
            )
            .unwrap(),
        );
        assert_eq!(banded.column_sq_norms(), vec![2.0, 10.0, 8.0]);
    }
}
