//! Dense Householder QR and the compressed WY machinery every structured
//! solver is built from.
//!
//! Reflectors are stored LAPACK-style: `H_k = I - tau_k v_k v_kᵀ` with
//! `v_k[k] = 1` implied and the tail of `v_k` kept below the diagonal of the
//! packed matrix. The pivot sign is chosen so that `R` has a nonnegative
//! diagonal, which makes the factorization of a fixed matrix deterministic.
//!
//! A run of `r` consecutive reflectors is also kept in compressed WY form
//! `H_s ··· H_{s+r-1} = I + Y T Yᵀ` (`Y` unit lower trapezoidal, `T` upper
//! triangular), so that applying `Qᵀ` to many columns is a pair of GEMMs:
//! `B + Y (Tᵀ (Yᵀ B))`.

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, gemm, norm2, DenseMatrix};
use crate::scalar::Scalar;

/// Default number of reflectors per compressed WY block.
pub const DEFAULT_BLOCK_WIDTH: usize = 32;

/// Factors with fewer reflectors than this are applied one reflector at a time.
const MIN_BLOCKED_REFLECTORS: usize = 8;

/// `I + Y T Yᵀ` acting on rows `row_offset..` of its target.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedWyBlock<T> {
    row_offset: usize,
    y: DenseMatrix<T>,
    t: DenseMatrix<T>,
}

impl<T: Scalar> CompressedWyBlock<T> {
    pub fn row_offset(&self) -> usize {
        self.row_offset
    }

    pub fn y(&self) -> &DenseMatrix<T> {
        &self.y
    }

    pub fn t(&self) -> &DenseMatrix<T> {
        &self.t
    }

    /// Number of reflectors in the block.
    pub fn width(&self) -> usize {
        self.t.rows()
    }

    /// Scalars that define the block: `Y` below its unit diagonal plus the
    /// upper triangle of `T`, i.e. `rows(Y) * width`.
    pub fn storage(&self) -> usize {
        self.y.rows() * self.t.rows()
    }

    /// Applies the block (`transpose` selects `(I + Y T Yᵀ)ᵀ`) to rows
    /// `row_offset..row_offset + y.rows()` of `b`.
    pub fn apply(&self, b: &mut DenseMatrix<T>, transpose: bool) {
        self.apply_at(b, 0, transpose);
    }

    /// As [`apply`](Self::apply) with an extra row shift into `b`.
    pub fn apply_at(&self, b: &mut DenseMatrix<T>, shift: usize, transpose: bool) {
        let r = self.width();
        if r == 0 || b.cols() == 0 {
            return;
        }
        let h = self.y.rows();
        let row0 = shift + self.row_offset;
        assert!(row0 + h <= b.rows(), "WY block exceeds target rows");
        let nc = b.cols();
        let ldb = b.rows() as isize;
        // W = Yᵀ B_sub
        let mut w = DenseMatrix::zeros(r, nc);
        // SAFETY: the strided view of `b` covers rows row0..row0+h of every column.
        unsafe {
            T::gemm_raw(
                r,
                h,
                nc,
                T::one(),
                self.y.as_slice().as_ptr(),
                h as isize,
                1,
                b.as_slice().as_ptr().add(row0),
                1,
                ldb,
                T::zero(),
                w.as_mut_slice().as_mut_ptr(),
                1,
                r as isize,
            );
        }
        // W = op(T) W
        let mut tw = DenseMatrix::zeros(r, nc);
        gemm(T::one(), &self.t, transpose, &w, false, T::zero(), &mut tw);
        // B_sub += Y W
        // SAFETY: as above; `b` is exclusively borrowed and distinct from `y`, `tw`.
        unsafe {
            T::gemm_raw(
                h,
                r,
                nc,
                T::one(),
                self.y.as_slice().as_ptr(),
                1,
                h as isize,
                tw.as_slice().as_ptr(),
                1,
                r as isize,
                T::one(),
                b.as_mut_slice().as_mut_ptr().add(row0),
                1,
                ldb,
            );
        }
    }

    /// Materializes `I + Y T Yᵀ` as an `n x n` matrix (`n` = total rows).
    pub fn to_dense(&self, n: usize) -> DenseMatrix<T> {
        let mut q = DenseMatrix::identity(n);
        self.apply(&mut q, false);
        q
    }
}

/// Householder QR of a dense `m x n` matrix.
#[derive(Clone, Debug)]
pub struct DenseQrFactor<T> {
    packed: DenseMatrix<T>,
    tau: Vec<T>,
    wy: Vec<CompressedWyBlock<T>>,
}

/// Computes the Householder QR of `a` with the default block width.
pub fn dense_qr<T: Scalar>(a: &DenseMatrix<T>) -> DenseQrFactor<T> {
    dense_qr_blocked(a.clone(), DEFAULT_BLOCK_WIDTH)
}

/// Householder QR taking ownership of the input; trailing columns are
/// updated with compressed WY blocks of `block_width` reflectors.
pub fn dense_qr_blocked<T: Scalar>(mut packed: DenseMatrix<T>, block_width: usize) -> DenseQrFactor<T> {
    let (m, n) = packed.shape();
    let k = m.min(n);
    let nb = block_width.max(1);
    let blocked = k >= MIN_BLOCKED_REFLECTORS;
    let mut tau = vec![T::zero(); k];
    let mut wy = Vec::new();

    let mut p0 = 0;
    while p0 < k {
        let pb = if blocked { nb.min(k - p0) } else { k - p0 };
        for j in p0..p0 + pb {
            tau[j] = make_reflector(packed.col_mut(j), j);
            if tau[j] != T::zero() {
                // Unblocked update inside the panel (and of everything when not blocking).
                let end = if blocked { p0 + pb } else { n };
                for c in j + 1..end {
                    apply_reflector_between(&mut packed, j, c, tau[j]);
                }
            }
        }
        if blocked {
            let block = wy_from_packed(&packed, &tau, p0, pb);
            if p0 + pb < n {
                apply_wy_to_columns(&block, &mut packed, p0 + pb, n, true);
            }
            wy.push(block);
        }
        p0 += pb;
    }
    DenseQrFactor { packed, tau, wy }
}

/// Overwrites `col[j..]` with `beta` and the reflector tail; returns `tau`.
fn make_reflector<T: Scalar>(col: &mut [T], j: usize) -> T {
    let x = &mut col[j..];
    if x.len() <= 1 {
        // A 1x1 "column": flip its sign if needed to keep R nonnegative.
        if let Some(v) = x.first_mut() {
            if *v < T::zero() {
                *v = -*v;
                return T::one() + T::one();
            }
        }
        return T::zero();
    }
    let alpha = x[0];
    let xnorm = norm2(&x[1..]);
    let norm = norm2(&[alpha, xnorm]);
    let guard = T::min_positive_value() / T::epsilon();
    if norm <= guard {
        // Treated as a zero column: no reflector.
        x[1..].iter_mut().for_each(|v| *v = T::zero());
        return T::zero();
    }
    if xnorm == T::zero() {
        if alpha >= T::zero() {
            return T::zero();
        }
        x[0] = -alpha;
        return T::one() + T::one();
    }
    let v1 = if alpha <= T::zero() {
        alpha - norm
    } else {
        -(xnorm / (alpha + norm)) * xnorm
    };
    let s = xnorm / v1.abs();
    let tau = (T::one() + T::one()) / (T::one() + s * s);
    let inv = v1.recip();
    x[1..].iter_mut().for_each(|v| *v *= inv);
    x[0] = norm;
    tau
}

/// Applies reflector `j` (stored in column `j` of `packed`) to column `c`.
fn apply_reflector_between<T: Scalar>(packed: &mut DenseMatrix<T>, j: usize, c: usize, tau: T) {
    let m = packed.rows();
    let data = packed.as_mut_slice();
    let (head, tail) = data.split_at_mut(c * m);
    let v = &head[j * m + j + 1..j * m + m];
    let col = &mut tail[j..m];
    apply_reflector(v, tau, col);
}

/// `col ← (I - tau v vᵀ) col` with `v = [1; v_tail]`.
#[inline]
pub(crate) fn apply_reflector<T: Scalar>(v_tail: &[T], tau: T, col: &mut [T]) {
    if tau == T::zero() {
        return;
    }
    let (c0, rest) = col.split_first_mut().expect("nonempty column");
    let w = *c0 + dot(v_tail, rest);
    let s = tau * w;
    *c0 -= s;
    axpy(-s, v_tail, rest);
}

/// Builds the compressed WY block for reflectors `start..start + r`.
fn wy_from_packed<T: Scalar>(
    packed: &DenseMatrix<T>,
    tau: &[T],
    start: usize,
    r: usize,
) -> CompressedWyBlock<T> {
    let m = packed.rows();
    let h = m - start;
    let mut y = DenseMatrix::zeros(h, r);
    for i in 0..r {
        let col = y.col_mut(i);
        col[i] = T::one();
        col[i + 1..].copy_from_slice(&packed.col(start + i)[start + i + 1..m]);
    }
    // Forward accumulation of T so that H_s···H_{s+r-1} = I - V T Vᵀ; stored negated.
    let mut t = DenseMatrix::zeros(r, r);
    for i in 0..r {
        let ti = tau[start + i];
        t[(i, i)] = ti;
        if i == 0 || ti == T::zero() {
            continue;
        }
        // z = -tau_i Vᵀ[0..i] v_i, using that v_i vanishes above row i.
        let vi = &y.col(i)[i..];
        let z: Vec<T> = (0..i).map(|p| -ti * dot(&y.col(p)[i..], vi)).collect();
        for row in 0..i {
            let mut acc = T::zero();
            for p in row..i {
                acc += t[(row, p)] * z[p];
            }
            t[(row, i)] = acc;
        }
    }
    t.scale(-T::one());
    CompressedWyBlock {
        row_offset: start,
        y,
        t,
    }
}

/// Applies a WY block to columns `c0..c1` of `target` in place.
fn apply_wy_to_columns<T: Scalar>(
    block: &CompressedWyBlock<T>,
    target: &mut DenseMatrix<T>,
    c0: usize,
    c1: usize,
    transpose: bool,
) {
    let r = block.width();
    let nc = c1 - c0;
    if r == 0 || nc == 0 {
        return;
    }
    let h = block.y.rows();
    let row0 = block.row_offset;
    let ld = target.rows();
    let mut w = DenseMatrix::zeros(r, nc);
    // SAFETY: the view (row0.., c0..c1) lies inside `target`.
    unsafe {
        let base = target.as_slice().as_ptr().add(c0 * ld + row0);
        T::gemm_raw(
            r,
            h,
            nc,
            T::one(),
            block.y.as_slice().as_ptr(),
            h as isize,
            1,
            base,
            1,
            ld as isize,
            T::zero(),
            w.as_mut_slice().as_mut_ptr(),
            1,
            r as isize,
        );
    }
    let mut tw = DenseMatrix::zeros(r, nc);
    gemm(T::one(), &block.t, transpose, &w, false, T::zero(), &mut tw);
    // SAFETY: as above; `target` is exclusively borrowed.
    unsafe {
        let base = target.as_mut_slice().as_mut_ptr().add(c0 * ld + row0);
        T::gemm_raw(
            h,
            r,
            nc,
            T::one(),
            block.y.as_slice().as_ptr(),
            1,
            h as isize,
            tw.as_slice().as_ptr(),
            1,
            r as isize,
            T::one(),
            base,
            1,
            ld as isize,
        );
    }
}

impl<T: Scalar> DenseQrFactor<T> {
    pub fn rows(&self) -> usize {
        self.packed.rows()
    }

    pub fn cols(&self) -> usize {
        self.packed.cols()
    }

    /// Number of reflectors, `min(rows, cols)`.
    pub fn num_reflectors(&self) -> usize {
        self.tau.len()
    }

    pub fn packed(&self) -> &DenseMatrix<T> {
        &self.packed
    }

    pub fn tau(&self) -> &[T] {
        &self.tau
    }

    /// The compressed WY blocks kept for application (empty for tiny factors).
    pub fn wy_blocks(&self) -> &[CompressedWyBlock<T>] {
        &self.wy
    }

    /// Economy `R`: `min(m, n) x n`, upper trapezoidal.
    pub fn r(&self) -> DenseMatrix<T> {
        self.packed.upper_triangle()
    }

    /// Full-length Householder vector `k` (zeros above row `k`, one at `k`).
    pub fn reflector(&self, k: usize) -> Vec<T> {
        let m = self.rows();
        let mut v = vec![T::zero(); m];
        v[k] = T::one();
        v[k + 1..].copy_from_slice(&self.packed.col(k)[k + 1..]);
        v
    }

    /// `b ← Qᵀ b` with the full `m x m` orthogonal factor.
    pub fn apply_qt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check_rhs(b)?;
        if self.wy.is_empty() {
            for k in 0..self.tau.len() {
                self.apply_single(k, b);
            }
        } else {
            for blk in &self.wy {
                blk.apply(b, true);
            }
        }
        Ok(())
    }

    /// `b ← Q b` with the full `m x m` orthogonal factor.
    pub fn apply_q_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check_rhs(b)?;
        if self.wy.is_empty() {
            for k in (0..self.tau.len()).rev() {
                self.apply_single(k, b);
            }
        } else {
            for blk in self.wy.iter().rev() {
                blk.apply(b, false);
            }
        }
        Ok(())
    }

    /// Reflector-by-reflector `Qᵀ b`, regardless of any WY blocks.
    pub fn apply_qt_unblocked(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        self.check_rhs(b)?;
        for k in 0..self.tau.len() {
            self.apply_single(k, b);
        }
        Ok(())
    }

    fn apply_single(&self, k: usize, b: &mut DenseMatrix<T>) {
        let m = self.rows();
        let v = &self.packed.col(k)[k + 1..m];
        for c in 0..b.cols() {
            apply_reflector(v, self.tau[k], &mut b.col_mut(c)[k..]);
        }
    }

    fn check_rhs(&self, b: &DenseMatrix<T>) -> Result<()> {
        if b.rows() != self.rows() {
            return Err(Error::dims("apply_q", (self.rows(), self.rows()), b.shape()));
        }
        Ok(())
    }

    /// Solves `R x = b` for the leading `n x n` triangle (requires `m >= n`).
    pub fn solve_r_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        let n = self.cols();
        if self.rows() < n {
            return Err(Error::dims("solve_r", (self.rows(), n), b.shape()));
        }
        solve_upper_in_place(&self.packed, n, b)
    }

    /// Solves `Rᵀ y = b` for the leading `n x n` triangle.
    pub fn solve_rt_in_place(&self, b: &mut DenseMatrix<T>) -> Result<()> {
        let n = self.cols();
        if self.rows() < n {
            return Err(Error::dims("solve_rt", (self.rows(), n), b.shape()));
        }
        solve_upper_transpose_in_place(&self.packed, n, b)
    }

    /// Scalars stored for the implicit `Q`: reflector tails, `tau`, WY blocks.
    pub fn q_storage(&self) -> usize {
        let m = self.rows();
        let tails: usize = (0..self.tau.len()).map(|k| m - k - 1).sum();
        tails + self.tau.len() + self.wy.iter().map(CompressedWyBlock::storage).sum::<usize>()
    }

    /// Least-squares solution `argmin ‖A x - b‖` for portrait `A`.
    pub fn solve_least_squares(&self, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut qtb = b.clone();
        self.apply_qt_in_place(&mut qtb)?;
        let mut x = qtb.rows_range(0, self.cols().min(qtb.rows()));
        self.solve_r_in_place(&mut x)?;
        Ok(x)
    }
}

/// Accumulates reflectors `block_start..block_start + r` of `factor` into
/// compressed WY form. `r = 0` yields the identity transform.
pub fn wy_accumulate<T: Scalar>(
    factor: &DenseQrFactor<T>,
    block_start: usize,
    r: usize,
) -> Result<CompressedWyBlock<T>> {
    let k = factor.num_reflectors();
    if block_start + r > k {
        return Err(Error::Structure {
            block: block_start,
            reason: format!("requested reflectors {block_start}..{} of {k}", block_start + r),
        });
    }
    if r == 0 {
        return Ok(CompressedWyBlock {
            row_offset: block_start,
            y: DenseMatrix::zeros(factor.rows() - block_start.min(factor.rows()), 0),
            t: DenseMatrix::zeros(0, 0),
        });
    }
    Ok(wy_from_packed(&factor.packed, &factor.tau, block_start, r))
}

/// Applies `Qᵀ` given as a sequence of WY blocks (in factorization order).
pub fn apply_wy_sequence_transpose<T: Scalar>(
    blocks: &[CompressedWyBlock<T>],
    b: &mut DenseMatrix<T>,
) {
    for blk in blocks {
        blk.apply(b, true);
    }
}

/// Solves `R x = b` where `R` is the upper triangle of a square matrix.
///
/// Fails with [`Error::Singular`] when a diagonal entry is at most
/// `ε · max|R|`.
pub fn solve_upper_triangular<T: Scalar>(
    r: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if r.rows() != r.cols() || b.rows() != r.cols() {
        return Err(Error::dims("solve_upper_triangular", r.shape(), b.shape()));
    }
    let mut x = b.clone();
    solve_upper_in_place(r, r.cols(), &mut x)?;
    Ok(x)
}

fn triangle_max<T: Scalar>(r: &DenseMatrix<T>, n: usize) -> T {
    (0..n).fold(T::zero(), |m, j| {
        r.col(j)[..=j].iter().fold(m, |m, v| m.max(v.abs()))
    })
}

fn check_diagonal<T: Scalar>(r: &DenseMatrix<T>, n: usize) -> Result<()> {
    let tol = T::epsilon() * triangle_max(r, n);
    for j in 0..n {
        let d = r[(j, j)];
        if !(d.abs() > tol) {
            return Err(Error::Singular { column: j });
        }
    }
    Ok(())
}

/// Back substitution with the leading `n x n` upper triangle of `r`.
pub(crate) fn solve_upper_in_place<T: Scalar>(
    r: &DenseMatrix<T>,
    n: usize,
    b: &mut DenseMatrix<T>,
) -> Result<()> {
    if b.rows() != n || r.rows() < n || r.cols() < n {
        return Err(Error::dims("solve_upper", (n, n), b.shape()));
    }
    check_diagonal(r, n)?;
    for c in 0..b.cols() {
        let x = b.col_mut(c);
        for j in (0..n).rev() {
            let col = &r.col(j)[..j];
            x[j] /= r[(j, j)];
            let xj = x[j];
            if xj != T::zero() {
                axpy(-xj, col, &mut x[..j]);
            }
        }
    }
    Ok(())
}

/// Forward substitution with the transpose of the leading upper triangle.
pub(crate) fn solve_upper_transpose_in_place<T: Scalar>(
    r: &DenseMatrix<T>,
    n: usize,
    b: &mut DenseMatrix<T>,
) -> Result<()> {
    if b.rows() != n || r.rows() < n || r.cols() < n {
        return Err(Error::dims("solve_upper_transpose", (n, n), b.shape()));
    }
    check_diagonal(r, n)?;
    for c in 0..b.cols() {
        let y = b.col_mut(c);
        for j in 0..n {
            let s = dot(&r.col(j)[..j], &y[..j]);
            y[j] = (y[j] - s) / r[(j, j)];
        }
    }
    Ok(())
}
