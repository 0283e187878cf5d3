use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Column-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("from_col_major", (rows, cols), (data.len(), 1)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(Error::dims("from_rows", (nrows, ncols), (i, row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    /// Convenience for literals in `f64`, converted to `T`.
    pub fn from_rows_f64<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let converted: Vec<Vec<T>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&v| T::of(v)).collect())
            .collect();
        Self::from_rows(&converted)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// A single-column matrix.
    pub fn column_vector(v: &[T]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Copies rows `[r0, r0+nr)` and columns `[c0, c0+nc)`.
    pub fn submatrix(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols, "submatrix out of range");
        let mut out = Self::zeros(nr, nc);
        for j in 0..nc {
            out.col_mut(j)
                .copy_from_slice(&self.col(c0 + j)[r0..r0 + nr]);
        }
        out
    }

    /// Writes `block` with its top-left corner at `(r0, c0)`.
    pub fn set_submatrix(&mut self, r0: usize, c0: usize, block: &DenseMatrix<T>) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "set_submatrix out of range"
        );
        for j in 0..block.cols {
            self.col_mut(c0 + j)[r0..r0 + block.rows].copy_from_slice(block.col(j));
        }
    }

    pub fn rows_range(&self, r0: usize, nr: usize) -> Self {
        self.submatrix(r0, 0, nr, self.cols)
    }

    pub fn vstack(top: &Self, bottom: &Self) -> Result<Self> {
        if top.cols != bottom.cols {
            return Err(Error::dims("vstack", top.shape(), bottom.shape()));
        }
        let mut out = Self::zeros(top.rows + bottom.rows, top.cols);
        out.set_submatrix(0, 0, top);
        out.set_submatrix(top.rows, 0, bottom);
        Ok(out)
    }

    pub fn hstack(left: &Self, right: &Self) -> Result<Self> {
        if left.rows != right.rows {
            return Err(Error::dims("hstack", left.shape(), right.shape()));
        }
        let mut data = Vec::with_capacity(left.data.len() + right.data.len());
        data.extend_from_slice(&left.data);
        data.extend_from_slice(&right.data);
        Ok(Self {
            rows: left.rows,
            cols: left.cols + right.cols,
            data,
        })
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dims("matmul", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(T::one(), self, false, other, false, T::zero(), &mut out);
        Ok(out)
    }

    /// `selfᵀ * other`.
    pub fn tr_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dims("tr_matmul", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(T::one(), self, true, other, false, T::zero(), &mut out);
        Ok(out)
    }

    /// `self * v` for a plain vector.
    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::dims("mul_vec", self.shape(), (v.len(), 1)));
        }
        let mut out = vec![T::zero(); self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj != T::zero() {
                axpy(vj, self.col(j), &mut out);
            }
        }
        Ok(out)
    }

    /// `selfᵀ * v` for a plain vector.
    pub fn tr_mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::dims("tr_mul_vec", self.shape(), (v.len(), 1)));
        }
        Ok((0..self.cols).map(|j| dot(self.col(j), v)).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dims(op, self.shape(), other.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm_fro(&self) -> T {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Number of exactly-nonzero entries.
    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != T::zero()).count()
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Upper-triangular part of the leading `min(rows, cols)` rows.
    pub fn upper_triangle(&self) -> Self {
        let k = self.rows.min(self.cols);
        Self::from_fn(k, self.cols, |i, j| if i <= j { self[(i, j)] } else { T::zero() })
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
///
/// Panics on a shape mismatch; callers validate shapes first.
pub fn gemm<T: Scalar>(
    alpha: T,
    a: &DenseMatrix<T>,
    trans_a: bool,
    b: &DenseMatrix<T>,
    trans_b: bool,
    beta: T,
    c: &mut DenseMatrix<T>,
) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::zero() {
            c.data.iter_mut().for_each(|v| *v = T::zero());
        } else {
            c.scale(beta);
        }
        return;
    }
    let lda = a.rows.max(1) as isize;
    let ldb = b.rows.max(1) as isize;
    let ldc = c.rows.max(1) as isize;
    let (rsa, csa) = if trans_a { (lda, 1) } else { (1, lda) };
    let (rsb, csb) = if trans_b { (ldb, 1) } else { (1, ldb) };
    // SAFETY: shapes asserted above; `c` is uniquely borrowed and distinct from `a`, `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            1,
            ldc,
        );
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean norm, scaled to avoid overflow and underflow.
pub fn norm2<T: Scalar>(x: &[T]) -> T {
    let scale = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return scale;
    }
    let s: T = x.iter().map(|&v| {
        let t = v / scale;
        t * t
    }).sum();
    scale * s.sqrt()
}

pub fn norm_inf<T: Scalar>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
        })
    }

    #[test]
    fn identity_times_column() {
        let i2 = DenseMatrix::<f64>::identity(2);
        let b = DenseMatrix::from_rows_f64(&[[1.0], [2.0]]).unwrap();
        assert_eq!(i2.matmul(&b).unwrap(), b);
    }

    #[test]
    fn column_selection() {
        let a = DenseMatrix::<f64>::from_rows_f64(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows_f64(&[[0.0], [1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, DenseMatrix::from_rows_f64(&[[2.0], [4.0]]).unwrap());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        // Small integers keep every product and partial sum exact.
        let a = DenseMatrix::<f64>::from_fn(5, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let b = DenseMatrix::<f64>::from_fn(4, 3, |i, j| ((i * 5 + j * 2) % 7) as f64 - 3.0);
        assert_eq!(a.matmul(&b).unwrap(), naive(&a, &b));
        assert_eq!(a.transpose().tr_matmul(&b).unwrap(), naive(&a, &b));
    }

    #[test]
    fn matmul_dimension_mismatch_reports_shapes() {
        let a = DenseMatrix::<f32>::zeros(2, 3);
        let b = DenseMatrix::<f32>::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        assert_eq!(err, Error::dims("matmul", (2, 3), (2, 3)));
        assert!(err.to_string().contains("2x3"));
    }

    #[test]
    fn empty_inner_dimension_gives_zeros() {
        let a = DenseMatrix::<f64>::zeros(3, 0);
        let b = DenseMatrix::<f64>::zeros(0, 2);
        assert_eq!(a.matmul(&b).unwrap(), DenseMatrix::zeros(3, 2));
    }

    #[test]
    fn scaled_norm_survives_extreme_values() {
        let big = [f32::MAX / 2.0, f32::MAX / 2.0];
        assert!(norm2(&big).is_finite());
        let tiny = [1e-30f32, 1e-30];
        assert!((norm2(&tiny) / 1.414_213_5e-30 - 1.0).abs() < 1e-6);
    }
}
