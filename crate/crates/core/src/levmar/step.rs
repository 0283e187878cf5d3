//! Solvers for the damped linear subproblem
//! `min ‖J p + f‖² + λ ‖D p‖²`, i.e. `(JᵀJ + λD²) p = −Jᵀf`.

use crate::error::{Error, Result};
use crate::householder::DEFAULT_BLOCK_WIDTH;
use crate::levmar::cholesky::{cholesky, cholesky_solve_in_place};
use crate::levmar::{Jacobian, SolverKind};
use crate::matrix::{
    gemm, BandedBlockMatrix, BlockDiagonalMatrix, DenseMatrix, Permutation, RowPermute,
    TripletMatrix,
};
use crate::ordering::{first_column_permutation, lm_interleave_permutation};
use crate::scalar::Scalar;
use crate::structured::{
    banded_from_sorted_rows, BlockBandedQr, BlockDiagonalQr, DenseQr, HorzCat, QrFactor,
    QrSolver,
};

/// Solves the damped subproblem for a sequence of `λ` with fixed `J`, `f`, `D`.
pub trait DampedSolve<T: Scalar> {
    fn solve(&mut self, lambda: T) -> Result<Vec<T>>;
}

/// One-shot convenience: the step of `kind` at a single `λ`.
pub fn damped_step<T: Scalar>(
    kind: SolverKind,
    j: &Jacobian<T>,
    f: &[T],
    d: &[T],
    lambda: T,
) -> Result<Vec<T>> {
    match kind {
        SolverKind::Qrkit => QrAugmented::new(j, f, d, DEFAULT_BLOCK_WIDTH)?.solve(lambda),
        SolverKind::QrkitCholesky => QrCholesky::new(j, f, d)?.solve(lambda),
        SolverKind::Cholesky => NormalEquations::new(j, f, d)?.solve(lambda),
        SolverKind::MoreQr => Ok(TwoStepQr::new(j, f, DEFAULT_BLOCK_WIDTH)?.damped(lambda, d)?.0),
    }
}

fn check_inputs<T: Scalar>(j: &Jacobian<T>, f: &[T], d: &[T]) -> Result<()> {
    j.validate()?;
    if f.len() != j.rows() {
        return Err(Error::dims("residual vector", (j.rows(), j.cols()), (f.len(), 1)));
    }
    if d.len() != j.cols() {
        return Err(Error::dims("damping vector", (j.rows(), j.cols()), (d.len(), 1)));
    }
    Ok(())
}

fn neg_column<T: Scalar>(v: &[T]) -> DenseMatrix<T> {
    DenseMatrix::from_fn(v.len(), 1, |i, _| -v[i])
}

/// Rows of the block-angular augmentation: each latent block gets its own
/// damping rows appended, and the global damping rows sit in a block with
/// no latent columns.
fn augment_block_angular<T: Scalar>(
    left: &BlockDiagonalMatrix<T>,
    right: &DenseMatrix<T>,
    f: &[T],
    d: &[T],
    s: T,
) -> (BlockDiagonalMatrix<T>, DenseMatrix<T>, DenseMatrix<T>) {
    let m1 = left.cols();
    let m2 = right.cols();
    let total = left.rows() + m1 + m2;
    let mut blocks = Vec::with_capacity(left.num_blocks() + 1);
    let mut right_aug = DenseMatrix::zeros(total, m2);
    let mut rhs = DenseMatrix::zeros(total, 1);
    let mut row = 0;
    for (k, b) in left.blocks().iter().enumerate() {
        let (h, w) = b.shape();
        let r0 = left.row_offsets()[k];
        let c0 = left.col_offsets()[k];
        let mut aug = DenseMatrix::zeros(h + w, w);
        aug.set_submatrix(0, 0, b);
        for i in 0..w {
            aug.col_mut(i)[h + i] = s * d[c0 + i];
        }
        blocks.push(aug);
        for jc in 0..m2 {
            right_aug.col_mut(jc)[row..row + h].copy_from_slice(&right.col(jc)[r0..r0 + h]);
        }
        for i in 0..h {
            rhs.col_mut(0)[row + i] = -f[r0 + i];
        }
        row += h + w;
    }
    blocks.push(DenseMatrix::zeros(m2, 0));
    for jc in 0..m2 {
        right_aug.col_mut(jc)[row + jc] = s * d[m1 + jc];
    }
    (BlockDiagonalMatrix::new(blocks), right_aug, rhs)
}

/// Backtrack step: one structured QR of the row-permuted `[J; √λ D]`.
pub struct QrAugmented<'a, T> {
    j: &'a Jacobian<T>,
    f: &'a [T],
    d: &'a [T],
    block_width: usize,
}

impl<'a, T: Scalar> QrAugmented<'a, T> {
    pub fn new(j: &'a Jacobian<T>, f: &'a [T], d: &'a [T], block_width: usize) -> Result<Self> {
        check_inputs(j, f, d)?;
        Ok(Self { j, f, d, block_width })
    }
}

impl<T: Scalar> DampedSolve<T> for QrAugmented<'_, T> {
    fn solve(&mut self, lambda: T) -> Result<Vec<T>> {
        let s = lambda.sqrt();
        let (d, f) = (self.d, self.f);
        let x = match self.j {
            Jacobian::Dense(jd) => {
                let (n, m) = jd.shape();
                let mut a = DenseMatrix::zeros(n + m, m);
                a.set_submatrix(0, 0, jd);
                for i in 0..m {
                    a.col_mut(i)[n + i] = s * d[i];
                }
                let mut rhs = DenseMatrix::zeros(n + m, 1);
                rhs.set_submatrix(0, 0, &neg_column(f));
                DenseQr { block_width: self.block_width }.compute(&a)?.solve(&rhs)?
            }
            Jacobian::BlockAngular { left, right } => {
                let (l, r, rhs) = augment_block_angular(left, right, f, d, s);
                HorzCat::<BlockDiagonalQr>::default()
                    .compute_parts(&l, &r)?
                    .solve(&rhs)?
            }
            Jacobian::Banded(b) => {
                let (aug, rhs) = augment_banded(b, f, d, s)?;
                BlockBandedQr { block_width: self.block_width }
                    .compute(&aug)?
                    .solve(&rhs)?
            }
        };
        Ok(x.into_vec())
    }
}

/// Appends to each banded block the damping rows of the columns it does
/// not share with its successor (the last block takes all its columns).
fn augment_banded<T: Scalar>(
    b: &BandedBlockMatrix<T>,
    f: &[T],
    d: &[T],
    s: T,
) -> Result<(BandedBlockMatrix<T>, DenseMatrix<T>)> {
    let nb = b.num_blocks();
    let mut blocks = Vec::with_capacity(nb);
    let mut offsets = Vec::with_capacity(nb);
    let mut rhs = DenseMatrix::zeros(b.rows() + b.cols(), 1);
    let mut added = 0;
    for (k, blk) in b.blocks().iter().enumerate() {
        let (h, w) = blk.shape();
        let e = if k + 1 == nb { w } else { w - b.overlaps()[k] };
        let c0 = b.col_offsets()[k];
        let r0 = b.row_offsets()[k];
        let mut aug = DenseMatrix::zeros(h + e, w);
        aug.set_submatrix(0, 0, blk);
        for i in 0..e {
            aug.col_mut(i)[h + i] = s * d[c0 + i];
        }
        let new_r0 = r0 + added;
        for i in 0..h {
            rhs.col_mut(0)[new_r0 + i] = -f[r0 + i];
        }
        // Zero rows of the original that lie in gaps keep their residuals.
        let gap_end = if k + 1 < nb { b.row_offsets()[k + 1] } else { b.rows() };
        for i in (r0 + h)..gap_end {
            rhs.col_mut(0)[i + added + e] = -f[i];
        }
        offsets.push(new_r0);
        blocks.push(aug);
        added += e;
    }
    for i in 0..b.row_offsets().first().copied().unwrap_or(0) {
        rhs.col_mut(0)[i] = -f[i];
    }
    let aug = BandedBlockMatrix::new(blocks, offsets, b.overlaps().to_vec())?;
    Ok((aug, rhs))
}

/// Normal-equations step with Schur elimination of the latent blocks for
/// block-angular `J`; dense Cholesky otherwise.
pub struct NormalEquations<T> {
    kind: NormalKind<T>,
    d2: Vec<T>,
}

enum NormalKind<T> {
    Dense {
        jtj: DenseMatrix<T>,
        g: Vec<T>,
    },
    Schur {
        /// `BₖᵀBₖ` per latent block.
        u: Vec<DenseMatrix<T>>,
        col_offsets: Vec<usize>,
        /// Stacked `BₖᵀCₖ` (`m1 x m2`).
        w: DenseMatrix<T>,
        /// `CᵀC`.
        v: DenseMatrix<T>,
        g1: Vec<T>,
        g2: Vec<T>,
    },
}

impl<T: Scalar> NormalEquations<T> {
    pub fn new(j: &Jacobian<T>, f: &[T], d: &[T]) -> Result<Self> {
        check_inputs(j, f, d)?;
        let d2 = d.iter().map(|&v| v * v).collect();
        let g: Vec<T> = j.tr_mul_vec(f)?.into_iter().map(|v| -v).collect();
        let kind = match j {
            Jacobian::BlockAngular { left, right } => {
                let m1 = left.cols();
                let m2 = right.cols();
                let mut w = DenseMatrix::zeros(m1, m2);
                let mut u = Vec::with_capacity(left.num_blocks());
                for (k, b) in left.blocks().iter().enumerate() {
                    let r0 = left.row_offsets()[k];
                    let c0 = left.col_offsets()[k];
                    let ck = right.submatrix(r0, 0, b.rows(), m2);
                    w.set_submatrix(c0, 0, &b.tr_matmul(&ck)?);
                    u.push(b.tr_matmul(b)?);
                }
                let v = right.tr_matmul(right)?;
                NormalKind::Schur {
                    u,
                    col_offsets: left.col_offsets().to_vec(),
                    w,
                    v,
                    g2: g[m1..].to_vec(),
                    g1: g[..m1].to_vec(),
                }
            }
            _ => {
                let jd = j.to_dense();
                NormalKind::Dense {
                    jtj: jd.tr_matmul(&jd)?,
                    g,
                }
            }
        };
        Ok(Self { kind, d2 })
    }
}

impl<T: Scalar> DampedSolve<T> for NormalEquations<T> {
    fn solve(&mut self, lambda: T) -> Result<Vec<T>> {
        match &self.kind {
            NormalKind::Dense { jtj, g } => {
                let mut a = jtj.clone();
                for (i, &dd) in self.d2.iter().enumerate() {
                    a.col_mut(i)[i] += lambda * dd;
                }
                let l = cholesky(&a)?;
                let mut p = g.clone();
                cholesky_solve_in_place(&l, &mut p)?;
                Ok(p)
            }
            NormalKind::Schur { u, col_offsets, w, v, g1, g2 } => {
                let m1 = g1.len();
                let m2 = g2.len();
                // Y = U⁻¹ W and y = U⁻¹ g1, block by block.
                let mut y_mat = DenseMatrix::zeros(m1, m2);
                let mut y = vec![T::zero(); m1];
                let mut factors = Vec::with_capacity(u.len());
                for (k, uk) in u.iter().enumerate() {
                    let c0 = col_offsets[k];
                    let wk = uk.rows();
                    let mut a = uk.clone();
                    for i in 0..wk {
                        a.col_mut(i)[i] += lambda * self.d2[c0 + i];
                    }
                    let l = cholesky(&a).map_err(|e| match e {
                        Error::NotPositiveDefinite { pivot } => {
                            Error::NotPositiveDefinite { pivot: c0 + pivot }
                        }
                        other => other,
                    })?;
                    let mut yk = g1[c0..c0 + wk].to_vec();
                    cholesky_solve_in_place(&l, &mut yk)?;
                    y[c0..c0 + wk].copy_from_slice(&yk);
                    for jc in 0..m2 {
                        let mut col = w.col(jc)[c0..c0 + wk].to_vec();
                        cholesky_solve_in_place(&l, &mut col)?;
                        y_mat.col_mut(jc)[c0..c0 + wk].copy_from_slice(&col);
                    }
                    factors.push(l);
                }
                // S = V + λD₂² − Wᵀ Y,  r = g2 − Wᵀ y.
                let mut s = v.clone();
                for i in 0..m2 {
                    s.col_mut(i)[i] += lambda * self.d2[m1 + i];
                }
                gemm(-T::one(), w, true, &y_mat, false, T::one(), &mut s);
                let wty = w.tr_mul_vec(&y)?;
                let mut p2: Vec<T> = g2.iter().zip(wty).map(|(&a, b)| a - b).collect();
                let ls = cholesky(&s).map_err(|e| match e {
                    Error::NotPositiveDefinite { pivot } => {
                        Error::NotPositiveDefinite { pivot: m1 + pivot }
                    }
                    other => other,
                })?;
                cholesky_solve_in_place(&ls, &mut p2)?;
                // p1 = y − Y p2.
                let yp = y_mat.mul_vec(&p2)?;
                let mut p: Vec<T> = y.iter().zip(yp).map(|(&a, b)| a - b).collect();
                p.extend(p2);
                Ok(p)
            }
        }
    }
}

/// Hybrid step: QR of the augmented latent blocks, then normal equations
/// (Cholesky) for the reduced global system `Q⊥₁ᵀ A₂`.
pub struct QrCholesky<'a, T> {
    j: &'a Jacobian<T>,
    f: &'a [T],
    d: &'a [T],
    fallback: Option<NormalEquations<T>>,
}

impl<'a, T: Scalar> QrCholesky<'a, T> {
    pub fn new(j: &'a Jacobian<T>, f: &'a [T], d: &'a [T]) -> Result<Self> {
        check_inputs(j, f, d)?;
        let fallback = match j {
            Jacobian::BlockAngular { .. } => None,
            _ => Some(NormalEquations::new(j, f, d)?),
        };
        Ok(Self { j, f, d, fallback })
    }
}

impl<T: Scalar> DampedSolve<T> for QrCholesky<'_, T> {
    fn solve(&mut self, lambda: T) -> Result<Vec<T>> {
        if let Some(ne) = &mut self.fallback {
            return ne.solve(lambda);
        }
        let Jacobian::BlockAngular { left, right } = self.j else {
            unreachable!("fallback covers other structures");
        };
        let (l, r, rhs) = augment_block_angular(left, right, self.f, self.d, lambda.sqrt());
        let m1 = l.cols();
        let m2 = r.cols();
        let f1 = BlockDiagonalQr::<DenseQr>::default().compute(&l)?;
        let c = f1.q_transpose_apply(&r)?;
        let qtb = f1.q_transpose_apply(&rhs)?;
        let h = c.rows() - m1;
        let bottom = c.rows_range(m1, h);
        let s = bottom.tr_matmul(&bottom)?;
        let mut p2 = bottom.tr_mul_vec(&qtb.col(0)[m1..])?;
        let ls = cholesky(&s).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot } => Error::NotPositiveDefinite { pivot: m1 + pivot },
            other => other,
        })?;
        cholesky_solve_in_place(&ls, &mut p2)?;
        let top = c.rows_range(0, m1);
        let tp = top.mul_vec(&p2)?;
        let mut x1 = DenseMatrix::from_fn(m1, 1, |i, _| qtb[(i, 0)] - tp[i]);
        f1.solve_r_in_place(&mut x1)?;
        let mut p = x1.into_vec();
        p.extend(p2);
        debug_assert_eq!(p.len(), m1 + m2);
        Ok(p)
    }
}

/// Two-step QR: `J = Q R` once, then `[R; √λ D] = Q' R_λ` per trial.
pub struct TwoStepQr<T: Scalar> {
    factor: Box<dyn QrFactor<T>>,
    /// First `m` entries of `Qᵀ f`.
    qtf: Vec<T>,
    structure: TwoStepStructure<T>,
    block_width: usize,
}

enum TwoStepStructure<T> {
    /// `R` as triplets, refactored through the interleaved banded path.
    Triangular(TripletMatrix<T>),
    /// `[[R₁, top], [0, R']]` with block diagonal `R₁`.
    Angular {
        r1: Vec<DenseMatrix<T>>,
        top: DenseMatrix<T>,
        r2: DenseMatrix<T>,
    },
}

impl<T: Scalar> TwoStepQr<T> {
    pub fn new(j: &Jacobian<T>, f: &[T], block_width: usize) -> Result<Self> {
        j.validate()?;
        if f.len() != j.rows() {
            return Err(Error::dims("residual vector", (j.rows(), j.cols()), (f.len(), 1)));
        }
        let m = j.cols();
        let (factor, structure): (Box<dyn QrFactor<T>>, _) = match j {
            Jacobian::Dense(d) => {
                let fac = DenseQr { block_width }.compute(d)?;
                let r = fac.r_triplets();
                (Box::new(fac), TwoStepStructure::Triangular(r))
            }
            Jacobian::Banded(b) => {
                let fac = BlockBandedQr { block_width }.compute(b)?;
                let r = fac.r_triplets();
                (Box::new(fac), TwoStepStructure::Triangular(r))
            }
            Jacobian::BlockAngular { left, right } => {
                let fac = HorzCat::<BlockDiagonalQr> {
                    left: BlockDiagonalQr::default(),
                    right: DenseQr { block_width },
                }
                .compute_parts(left, right)?;
                let r1 = fac.left().block_factors().iter().map(|b| b.r()).collect();
                let top = fac.top().clone();
                let r2 = fac.right().r();
                (Box::new(fac), TwoStepStructure::Angular { r1, top, r2 })
            }
        };
        let qtf_full = factor.q_transpose_apply(&DenseMatrix::column_vector(f))?;
        let qtf = qtf_full.col(0)[..m].to_vec();
        Ok(Self {
            factor,
            qtf,
            structure,
            block_width,
        })
    }

    pub fn cols(&self) -> usize {
        self.qtf.len()
    }

    /// Gauss-Newton step `−R⁻¹ (Qᵀf)[..m]`.
    pub fn gauss_newton(&self) -> Result<Vec<T>> {
        let mut x = DenseMatrix::from_fn(self.qtf.len(), 1, |i, _| -self.qtf[i]);
        self.factor.solve_r_in_place(&mut x)?;
        Ok(x.into_vec())
    }

    /// Solves `Rᵀ y = v` with the factor of `J`.
    pub fn solve_rt(&self, v: &[T]) -> Result<Vec<T>> {
        let mut y = DenseMatrix::column_vector(v);
        self.factor.solve_rt_in_place(&mut y)?;
        Ok(y.into_vec())
    }

    /// `Rᵀ (Qᵀ f)[..m]`, which equals `Jᵀ f`.
    pub fn rt_qtf(&self) -> Vec<T> {
        let r = self.factor.r_triplets();
        let mut out = vec![T::zero(); self.qtf.len()];
        for &(i, j, v) in r.entries() {
            out[j] += v * self.qtf[i];
        }
        out
    }

    /// Damped step at `λ` and the factor `R_λ` of `[R; √λ D]`.
    pub fn damped(&self, lambda: T, d: &[T]) -> Result<(Vec<T>, Box<dyn QrFactor<T>>)> {
        let m = self.qtf.len();
        if d.len() != m {
            return Err(Error::dims("damping vector", (m, m), (d.len(), 1)));
        }
        let s = lambda.sqrt();
        match &self.structure {
            TwoStepStructure::Triangular(r) => {
                let mut entries = r.entries().to_vec();
                let mut profile: Vec<usize> = (0..m).collect();
                for &(i, j, _) in r.entries() {
                    profile[i] = profile[i].max(j);
                }
                for (j, &dj) in d.iter().enumerate() {
                    entries.push((m + j, j, s * dj));
                }
                let stacked = TripletMatrix::from_entries(2 * m, m, entries)?;
                let interleave = lm_interleave_permutation(&profile, m);
                let p1 = stacked.permute_rows(&interleave)?;
                // Exact zeros on R's diagonal can break the staircase; re-sort.
                let fix = first_column_permutation(&p1);
                let perm: Permutation = fix.compose(&interleave)?;
                let sorted = p1.permute_rows(&fix)?;
                let banded = banded_from_sorted_rows(&sorted, self.block_width)?;
                let fac = BlockBandedQr {
                    block_width: self.block_width,
                }
                .compute(&banded)?;
                let mut rhs = vec![T::zero(); 2 * m];
                for i in 0..m {
                    rhs[i] = -self.qtf[i];
                }
                let rhs = DenseMatrix::column_vector(&perm.apply_slice(&rhs)?);
                let x = fac.solve(&rhs)?;
                Ok((x.into_vec(), Box::new(fac)))
            }
            TwoStepStructure::Angular { r1, top, r2 } => {
                let m2 = r2.cols();
                let m1 = m - m2;
                let mut blocks = Vec::with_capacity(r1.len() + 1);
                let total = 2 * m;
                let mut right = DenseMatrix::zeros(total, m2);
                let mut rhs = DenseMatrix::zeros(total, 1);
                let (mut row, mut col) = (0, 0);
                for rk in r1 {
                    let w = rk.cols();
                    let mut aug = DenseMatrix::zeros(2 * w, w);
                    aug.set_submatrix(0, 0, rk);
                    for i in 0..w {
                        aug.col_mut(i)[w + i] = s * d[col + i];
                    }
                    blocks.push(aug);
                    right.set_submatrix(row, 0, &top.submatrix(col, 0, w, m2));
                    for i in 0..w {
                        rhs.col_mut(0)[row + i] = -self.qtf[col + i];
                    }
                    row += 2 * w;
                    col += w;
                }
                blocks.push(DenseMatrix::zeros(2 * m2, 0));
                right.set_submatrix(row, 0, r2);
                for i in 0..m2 {
                    right.col_mut(i)[row + m2 + i] = s * d[m1 + i];
                    rhs.col_mut(0)[row + i] = -self.qtf[m1 + i];
                }
                let left = BlockDiagonalMatrix::new(blocks);
                let fac = HorzCat::<BlockDiagonalQr> {
                    left: BlockDiagonalQr::default(),
                    right: DenseQr {
                        block_width: self.block_width,
                    },
                }
                .compute_parts(&left, &right)?;
                let x = fac.solve(&rhs)?;
                Ok((x.into_vec(), Box::new(fac)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system_halves_the_rhs() {
        let j = Jacobian::Dense(DenseMatrix::<f64>::identity(3));
        let f = [-1.0, 0.0, 0.0];
        let d = [1.0; 3];
        for kind in SolverKind::ALL {
            let p = damped_step(kind, &j, &f, &d, 1.0).unwrap();
            assert!((p[0] - 0.5).abs() < 1e-15, "{kind:?}");
            assert!(p[1].abs() < 1e-15 && p[2].abs() < 1e-15);
        }
    }
}
