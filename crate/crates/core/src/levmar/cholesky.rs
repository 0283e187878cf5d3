//! Dense Cholesky factorization for the normal-equations baseline.

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};
use crate::scalar::Scalar;

/// Lower Cholesky factor `L` with `A = L Lᵀ` (upper triangle of the
/// result is zeroed). Only the lower triangle of `a` is read.
pub fn cholesky<T: Scalar>(a: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dims("cholesky", a.shape(), a.shape()));
    }
    // Work on the transpose so that row i of L is contiguous (column i here).
    let mut lt = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&lt.col(i)[..j], &lt.col(j)[..j]);
            let v = a[(i, j)] - s;
            if i == j {
                if !(v > T::zero()) || !v.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                lt.col_mut(i)[i] = v.sqrt();
            } else {
                let d = lt[(j, j)];
                lt.col_mut(i)[j] = v / d;
            }
        }
    }
    Ok(lt.transpose())
}

/// Solves `L Lᵀ x = b` in place given the lower factor.
pub fn cholesky_solve_in_place<T: Scalar>(l: &DenseMatrix<T>, b: &mut [T]) -> Result<()> {
    let n = l.rows();
    if b.len() != n {
        return Err(Error::dims("cholesky_solve", l.shape(), (b.len(), 1)));
    }
    // L y = b (column-oriented forward substitution).
    for j in 0..n {
        b[j] /= l[(j, j)];
        let yj = b[j];
        let col = &l.col(j)[j + 1..];
        for (bi, &lij) in b[j + 1..].iter_mut().zip(col) {
            *bi -= lij * yj;
        }
    }
    // Lᵀ x = y.
    for j in (0..n).rev() {
        let s = dot(&l.col(j)[j + 1..], &b[j + 1..]);
        b[j] = (b[j] - s) / l[(j, j)];
    }
    Ok(())
}
