use proptest::prelude::*;
use qrkit::householder::dense_qr;
use qrkit::matrix::{BandedBlockMatrix, BlockDiagonalMatrix, DenseMatrix};
use qrkit::structured::{
    solve_least_squares, AnyQr, BlockBandedQr, BlockDiagonalQr, DenseQr, HorzCat, HorzCatMatrix,
    MatrixShape, QrFactor, QrSolver, StructuredMatrix, VertCat, VertCatMatrix,
};
use qrkit::{Error, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: Scalar>(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix<T> {
    DenseMatrix::from_fn(m, n, |_, _| T::of(rng.gen_range(-1.0..1.0)))
}

/// Orthogonality and reconstruction of a factor against the dense matrix.
fn check_invariants<T: Scalar, F: QrFactor<T> + ?Sized>(f: &F, a: &DenseMatrix<T>) {
    let (n, m) = a.shape();
    let eps = T::epsilon().as_f64();
    let q = f.q_apply(&DenseMatrix::identity(n)).unwrap();
    let qtq = q.tr_matmul(&q).unwrap();
    let ortho = qtq.sub(&DenseMatrix::identity(n)).unwrap().max_abs().as_f64();
    assert!(ortho <= 64.0 * eps * n as f64, "orthogonality {ortho:e}");

    let r = f.matrix_r();
    let mut r_full = DenseMatrix::zeros(n, m);
    r_full.set_submatrix(0, 0, &r);
    let qr = f.q_apply(&r_full).unwrap();
    let err = qr.sub(a).unwrap().norm_fro().as_f64();
    let scale = a.norm_fro().as_f64();
    assert!(err <= 64.0 * eps * scale, "reconstruction {err:e} vs {scale:e}");
    for j in 0..r.cols() {
        for i in (j + 1)..r.rows() {
            assert_eq!(r[(i, j)], T::zero(), "R not upper triangular at ({i}, {j})");
        }
    }
}

fn assert_solution_matches<T: Scalar, F: QrFactor<T> + ?Sized>(
    f: &F,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    tol: f64,
) {
    let x = solve_least_squares(f, b).unwrap();
    let oracle = dense_qr(a).solve_least_squares(b).unwrap();
    let rel = x.sub(&oracle).unwrap().norm_fro().as_f64() / oracle.norm_fro().as_f64().max(1e-300);
    assert!(rel <= tol, "relative solution error {rel:e}");
}

#[test]
fn orthonormal_columns_recover_unit_vector() {
    let a = DenseMatrix::<f64>::from_rows_f64(&[[0.6, 0.0], [0.8, 0.0], [0.0, 1.0]]).unwrap();
    let b = DenseMatrix::column_vector(&[0.6, 0.8, 0.0]);
    let f = DenseQr::default().compute(&a).unwrap();
    let x = solve_least_squares(&f, &b).unwrap();
    assert!((x[(0, 0)] - 1.0).abs() < 1e-15 && x[(1, 0)].abs() < 1e-15);
}

#[test]
fn three_by_two_normal_equations() {
    let a = DenseMatrix::<f64>::from_rows_f64(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let b = DenseMatrix::column_vector(&[1.0, 1.0, 3.0]);
    let f = DenseQr::default().compute(&a).unwrap();
    let x = f.solve(&b).unwrap();
    assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    assert!((x[(1, 0)] - 4.0 / 3.0).abs() < 1e-14);
}

#[test]
fn normal_equation_residual_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a: DenseMatrix<f64> = random(&mut rng, 60, 20);
    let b: DenseMatrix<f64> = random(&mut rng, 60, 1);
    let f = DenseQr::default().compute(&a).unwrap();
    let x = f.solve(&b).unwrap();
    let res = a.matmul(&x).unwrap().sub(&b).unwrap();
    let g = a.tr_matmul(&res).unwrap();
    let bound = 256.0 * f64::EPSILON * a.norm_fro().powi(2) * x.norm_fro();
    assert!(g.norm_fro() <= bound);
}

#[test]
fn singular_column_is_reported() {
    let mut a = DenseMatrix::<f64>::from_fn(5, 3, |i, j| (i + j * j) as f64 + 1.0);
    for i in 0..5 {
        let v = a[(i, 0)] * 2.0;
        a.col_mut(2)[i] = v;
    }
    let f = DenseQr::default().compute(&a).unwrap();
    let err = f.solve(&DenseMatrix::zeros(5, 1)).unwrap_err();
    assert!(matches!(err, Error::Singular { column: 2 }), "{err}");
}

#[test]
fn block_diagonal_hundred_blocks_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let blocks: Vec<DenseMatrix<f64>> = (0..100).map(|_| random(&mut rng, 4, 2)).collect();
    let a = BlockDiagonalMatrix::new(blocks);
    let dense = a.to_dense();
    assert_eq!(dense.shape(), (400, 200));
    let b = random(&mut rng, 400, 1);
    let f = BlockDiagonalQr::<DenseQr>::default().compute(&a).unwrap();
    assert_solution_matches(&f, &dense, &b, 1e-8);
    check_invariants(&f, &dense);
}

#[test]
fn horzcat_with_ellipse_structure_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 50;
    let left = BlockDiagonalMatrix::new((0..n).map(|_| random::<f64>(&mut rng, 2, 1)).collect());
    let right = random(&mut rng, 2 * n, 5);
    let a = HorzCatMatrix { left, right };
    let dense = a.to_dense();
    let b = random(&mut rng, 2 * n, 1);
    let f = HorzCat::<BlockDiagonalQr>::default().compute(&a).unwrap();
    assert_solution_matches(&f, &dense, &b, 1e-8);
    check_invariants(&f, &dense);
}

#[test]
fn banded_chain_matches_dense_with_bounded_storage() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 200;
    let blocks: Vec<DenseMatrix<f64>> = (0..k).map(|_| random(&mut rng, 4, 3)).collect();
    let a = BandedBlockMatrix::stacked(blocks, vec![1; k - 1]).unwrap();
    let dense = a.to_dense();
    let b = random(&mut rng, a.rows(), 1);
    let f = BlockBandedQr::default().compute(&a).unwrap();
    assert_solution_matches(&f, &dense, &b, 1e-8);

    // Every window holds at most 4 + 1 rows and eliminates at most 3 columns.
    let width = 3;
    let bound: usize = (0..k).map(|_| 4 * width).sum::<usize>() + width * width * k;
    assert!(f.q_storage() <= bound, "{} > {bound}", f.q_storage());
    assert!(f.q_storage() < dense.rows() * dense.rows() / 50);
    assert!(f.r_triplets().bandwidth() <= 3 + 1);
}

#[test]
fn banded_zero_overlap_equals_block_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let blocks: Vec<DenseMatrix<f64>> = (0..6).map(|i| random(&mut rng, 5 + i % 2, 3)).collect();
    let banded = BandedBlockMatrix::stacked(blocks.clone(), vec![0; 5]).unwrap();
    let bd = BlockDiagonalMatrix::new(blocks);
    let rb = BlockBandedQr::default().compute(&banded).unwrap().matrix_r();
    let rd = BlockDiagonalQr::<DenseQr>::default().compute(&bd).unwrap().matrix_r();
    assert!(rb.sub(&rd).unwrap().max_abs() < 1e-13);
}

#[test]
fn vertcat_lm_augmentation_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 20;
    let band = 3;
    let mut r = DenseMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..(i + band).min(m) {
            r.col_mut(j)[i] = if i == j { 1.0 + rng.gen::<f64>() } else { rng.gen_range(-1.0..1.0) };
        }
    }
    let lambda_half = 0.3f64;
    let d = DenseMatrix::from_fn(m, m, |i, j| if i == j { lambda_half * (1.0 + i as f64 / m as f64) } else { 0.0 });
    let a = VertCatMatrix { top: r.clone(), bottom: d.clone() };
    let dense = a.to_dense();
    let b = random(&mut rng, 2 * m, 1);
    let solver = VertCat { top: DenseQr::default(), bottom: DenseQr::default(), block_width: 4 };
    let f = solver.compute(&a).unwrap();
    assert_solution_matches(&f, &dense, &b, 1e-8);
    check_invariants(&f, &dense);
    assert!(f.banded().r_banded().num_blocks() > 1);
}

#[test]
fn vertcat_with_empty_bottom_reduces_to_top() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let top: DenseMatrix<f64> = random(&mut rng, 8, 4);
    let a = VertCatMatrix { top: top.clone(), bottom: DenseMatrix::zeros(0, 4) };
    let f = VertCat::<DenseQr, DenseQr>::default().compute(&a).unwrap();
    assert!(f.interleave().is_identity());
    let direct = dense_qr(&top).r();
    assert!(f.matrix_r().sub(&direct).unwrap().max_abs() < 1e-14);
}

#[test]
fn runtime_composition_nests() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let left = StructuredMatrix::BlockDiagonal(BlockDiagonalMatrix::new(
        (0..10).map(|_| random(&mut rng, 3, 2)).collect(),
    ));
    let hz = StructuredMatrix::HorzCat(Box::new(left), random(&mut rng, 30, 3));
    let blocks: Vec<DenseMatrix<f64>> = (0..5).map(|_| random(&mut rng, 6, 5)).collect();
    let bottom = StructuredMatrix::Banded(BandedBlockMatrix::stacked(blocks, vec![1, 1, 0, 0]).unwrap());
    let a = StructuredMatrix::VertCat(Box::new(hz), Box::new(bottom));
    let dense = a.to_dense();
    assert_eq!(dense.shape(), (60, 23));
    let f = AnyQr::default().compute(&a).unwrap();
    let b = random(&mut rng, 60, 2);
    assert_solution_matches(&f, &dense, &b, 1e-8);
    check_invariants(&*f, &dense);
}

#[test]
fn single_precision_factors_hold_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let left = BlockDiagonalMatrix::new((0..30).map(|_| random::<f32>(&mut rng, 3, 2)).collect());
    let a = HorzCatMatrix { left, right: random(&mut rng, 90, 4) };
    let dense = a.to_dense();
    let f = HorzCat::<BlockDiagonalQr>::default().compute(&a).unwrap();
    check_invariants(&f, &dense);
}

#[test]
fn solve_rt_inverts_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let blocks: Vec<DenseMatrix<f64>> = (0..8).map(|_| random(&mut rng, 5, 4)).collect();
    let a = BandedBlockMatrix::stacked(blocks, vec![2; 7]).unwrap();
    let f = BlockBandedQr { block_width: 3 }.compute(&a).unwrap();
    let r = f.matrix_r();
    let y: DenseMatrix<f64> = random(&mut rng, a.cols(), 1);
    let mut b = r.tr_matmul(&y).unwrap();
    f.solve_rt_in_place(&mut b).unwrap();
    assert!(b.sub(&y).unwrap().max_abs() < 1e-10);
}

fn banded_case() -> impl Strategy<Value = (Vec<(usize, usize)>, Vec<usize>, u64)> {
    prop::collection::vec((1usize..6, 1usize..5), 1..8).prop_flat_map(|dims| {
        let k = dims.len();
        let overlaps = prop::collection::vec(0usize..3, k.saturating_sub(1));
        (Just(dims), overlaps, any::<u64>())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn banded_factor_invariants((dims, overlaps, seed) in banded_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Rows per block >= columns keeps every window able to eliminate.
        let blocks: Vec<DenseMatrix<f64>> = dims
            .iter()
            .map(|&(extra, cols)| random(&mut rng, cols + extra, cols))
            .collect();
        let overlaps: Vec<usize> = overlaps
            .iter()
            .enumerate()
            .map(|(k, &r)| r.min(blocks[k].cols()).min(blocks[k + 1].cols()))
            .collect();
        let a = BandedBlockMatrix::stacked(blocks, overlaps).unwrap();
        let dense = a.to_dense();
        let f = BlockBandedQr { block_width: 2 }.compute(&a).unwrap();
        check_invariants(&f, &dense);
        let max_span = a.blocks().iter().map(|b| b.cols()).max().unwrap();
        prop_assert!(f.r_triplets().bandwidth() < max_span);
    }
}
