use std::fmt::Write as _;
use std::io::Write as _;

use qrkit::levmar::{check_jacobian, energy, minimize, Jacobian, LeastSquaresProblem, LmConfig, SolverKind};
use qrkit::matrix::{DenseMatrix, RowPermute};
use qrkit::problems::ba::{project_jacobian, Observation, CAMERA_PARAMS, POINT_PARAMS};
use qrkit::problems::{
    generate_ellipse_data, parse_bal, read_bal_file, synthetic_scene, write_bal, BalProblem, EllipseData,
    EllipseParams, EllipseProblem, SceneOptions,
};
use qrkit::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn unit_circle_fits_exactly() {
    let angles = [0.0, 0.7, 2.0, 3.5, 5.1];
    let points = angles.iter().map(|t: &f64| [t.cos(), t.sin()]).collect();
    let p = EllipseProblem::<f64>::new(points);
    let mut x = angles.to_vec();
    x.extend([0.0, 0.0, 1.0, 1.0, 0.0]);
    assert!(p.residuals(&x).unwrap().iter().all(|r| r.abs() < 1e-15));
}

#[test]
fn ellipse_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = generate_ellipse_data(20, EllipseParams::default(), 0.05, 9).unwrap();
    let p = data.problem::<f64>();
    let mut x: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    x.extend([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 2.5, 1.2, rng.gen_range(-1.0..1.0)]);
    let check = check_jacobian(&p, &x).unwrap();
    assert!(check.max_abs_deviation <= 1e-6, "{check:?}");
    assert!(check.passes(1e-4));
    match p.jacobian(&x).unwrap() {
        Jacobian::BlockAngular { left, right } => {
            assert_eq!(left.num_blocks(), 20);
            assert!(left.blocks().iter().all(|b| b.shape() == (2, 1)));
            assert_eq!(right.shape(), (40, 5));
        }
        other => panic!("unexpected structure {other:?}"),
    }
}

#[test]
fn noiseless_ellipse_has_zero_energy_at_truth() {
    let data = generate_ellipse_data(200, EllipseParams::default(), 0.0, 2).unwrap();
    let e = energy(&data.problem::<f64>(), &data.true_params()).unwrap();
    assert!(e < 1e-20, "{e:e}");
}

#[test]
fn ellipse_generation_is_deterministic() {
    let a = generate_ellipse_data(300, EllipseParams::default(), 0.1, 77).unwrap();
    let b = generate_ellipse_data(300, EllipseParams::default(), 0.1, 77).unwrap();
    let bits = |d: &EllipseData| d.points.iter().flat_map(|p| [p[0].to_bits(), p[1].to_bits()]).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let c = generate_ellipse_data(300, EllipseParams::default(), 0.1, 78).unwrap();
    assert_ne!(bits(&a), bits(&c));
    assert!(generate_ellipse_data(0, EllipseParams::default(), 0.1, 1).is_err());
}

#[test]
fn ellipse_dataset_round_trips_through_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ellipse.csv");
    let data = generate_ellipse_data(50, EllipseParams::default(), 0.02, 5).unwrap();
    data.save(&path).unwrap();
    assert_eq!(EllipseData::load(&path).unwrap(), data);
    std::fs::write(&path, "x,y\n1.0,2.0\n3.0,oops\n").unwrap();
    match EllipseData::load(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn noiseless_ellipse_converges_for_every_solver() {
    let data = generate_ellipse_data(500, EllipseParams::default(), 0.0, 1).unwrap();
    let p = data.problem::<f64>();
    let x0 = data.initial_params();
    for kind in SolverKind::ALL {
        let config = LmConfig { solver: kind, ..LmConfig::default() };
        let res = minimize(&p, &x0, &config).unwrap();
        assert!(res.trace.final_energy() < 1e-10, "{kind}: {} {:?}", res.trace.final_energy(), res.trace.status);
    }
}

fn two_camera_scene() -> BalProblem {
    synthetic_scene(SceneOptions {
        cameras: 2,
        points: 5,
        views_per_point: 2,
        pixel_noise: 0.3,
        perturbation: 0.05,
        seed: 3,
    })
    .unwrap()
    .0
}

#[test]
fn ba_jacobian_matches_finite_differences() {
    let mut bal = two_camera_scene();
    // Give every camera a visible rotation so the Rodrigues derivative is exercised.
    bal.cameras[0][..3].copy_from_slice(&[0.3, -0.2, 0.1]);
    let p = bal.problem::<f64>();
    let check = check_jacobian(&p, &bal.params()).unwrap();
    assert!(check.max_abs_deviation <= 1e-5, "{check:?}");
    // The small-angle branch.
    bal.cameras[1][..3].copy_from_slice(&[0.0, 0.0, 0.0]);
    let check = check_jacobian(&bal.problem::<f64>(), &bal.params()).unwrap();
    assert!(check.max_abs_deviation <= 1e-5, "{check:?}");
}

#[test]
fn structured_ba_jacobian_equals_entrywise_assembly() {
    let (bal, _) = synthetic_scene(SceneOptions { cameras: 4, points: 12, seed: 8, ..SceneOptions::default() }).unwrap();
    let p = bal.problem::<f64>();
    let x = bal.params();
    let n = bal.observations.len();
    let m1 = POINT_PARAMS * bal.points.len();
    // Rows in BAL observation order.
    let mut dense = DenseMatrix::zeros(2 * n, bal.num_params());
    for (i, o) in bal.observations.iter().enumerate() {
        let cam = &x[m1 + CAMERA_PARAMS * o.camera..m1 + CAMERA_PARAMS * (o.camera + 1)];
        let pt = &x[POINT_PARAMS * o.point..POINT_PARAMS * (o.point + 1)];
        let (dp, dc) = project_jacobian(cam, pt).unwrap();
        for r in 0..2 {
            for j in 0..POINT_PARAMS {
                dense.col_mut(POINT_PARAMS * o.point + j)[2 * i + r] = dp[r][j];
            }
            for j in 0..CAMERA_PARAMS {
                dense.col_mut(m1 + CAMERA_PARAMS * o.camera + j)[2 * i + r] = dc[r][j];
            }
        }
    }
    let perm = p.structure().row_permutation();
    let expect = dense.permute_rows(&perm).unwrap();
    assert_eq!(p.jacobian(&x).unwrap().to_dense(), expect);
}

fn obs(camera: usize, point: usize) -> Observation {
    Observation { camera, point, u: 0.0, v: 0.0 }
}

#[test]
fn ba_structure_counts() {
    let cam = [0.0, 0.0, 0.0, 0.0, 0.0, -5.0, 100.0, 0.0, 0.0];
    let one = BalProblem {
        cameras: vec![cam; 3],
        points: vec![[0.1, 0.2, 0.3]],
        observations: vec![obs(0, 0), obs(1, 0), obs(2, 0)],
    };
    let s = one.structure();
    assert_eq!(s.block_rows, vec![6]);
    let two = BalProblem {
        cameras: vec![cam; 2],
        points: vec![[0.1, 0.2, 0.3], [-0.1, 0.0, 0.2]],
        observations: vec![obs(0, 0), obs(0, 1), obs(1, 0), obs(1, 1)],
    };
    let s = two.structure();
    assert_eq!(s.block_rows, vec![4, 4]);
    assert_eq!(s.order, vec![0, 2, 1, 3]);
    match two.problem::<f64>().jacobian(&two.params()).unwrap() {
        Jacobian::BlockAngular { left, right } => {
            assert_eq!(left.blocks().iter().map(|b| b.shape()).collect::<Vec<_>>(), vec![(4, 3), (4, 3)]);
            assert_eq!(right.shape(), (8, 18));
        }
        other => panic!("unexpected structure {other:?}"),
    }
}

/// BAL text with the given counts; every point is seen by at least two cameras.
fn bal_text(cameras: usize, points: usize, observations: usize) -> String {
    let mut s = String::new();
    writeln!(s, "{cameras} {points} {observations}").unwrap();
    for k in 0..observations {
        let pt = k % points;
        let cam = (k / points + pt) % cameras;
        writeln!(s, "{cam} {pt} 1.5e0 -2.5e-1").unwrap();
    }
    for _ in 0..cameras {
        for v in [0.01, -0.02, 0.03, 0.1, 0.2, -10.0, 500.0, 0.0, 0.0] {
            writeln!(s, "{v:e}").unwrap();
        }
    }
    for j in 0..points {
        for v in [j as f64 * 1e-4, 0.5, -0.25] {
            writeln!(s, "{v:e}").unwrap();
        }
    }
    s
}

#[test]
fn benchmark_scene_dimensions() {
    for (c, p, o, rows, cols, point_cols, cam_cols) in [
        (21, 11315, 36455, 72910, 34134, 33945, 189),
        (16, 22106, 83718, 167436, 66462, 66318, 144),
    ] {
        let bal = parse_bal(bal_text(c, p, o).as_bytes()).unwrap();
        assert_eq!((bal.num_residuals(), bal.num_params()), (rows, cols));
        let s = bal.structure();
        assert_eq!((s.point_cols, s.camera_cols), (point_cols, cam_cols));
        assert_eq!(s.block_rows.iter().sum::<usize>(), rows);
    }
}

#[test]
fn bal_round_trip_and_gzip() {
    let minimal = "1 1 1\n0 0 -3.5 2.25\n0.1\n0.2\n0.3\n1\n2\n-3\n400\n0.01\n0.001\n1\n2\n-4\n";
    let a = parse_bal(minimal.as_bytes()).unwrap();
    assert_eq!(a.observations, vec![Observation { camera: 0, point: 0, u: -3.5, v: 2.25 }]);
    let mut out = Vec::new();
    write_bal(&a, &mut out).unwrap();
    assert_eq!(parse_bal(out.as_slice()).unwrap(), a);

    let (scene, _) = synthetic_scene(SceneOptions::default()).unwrap();
    let mut text = Vec::new();
    write_bal(&scene, &mut text).unwrap();
    assert_eq!(parse_bal(text.as_slice()).unwrap(), scene);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.txt.gz");
    let mut gz = flate2::write::GzEncoder::new(std::fs::File::create(&path).unwrap(), flate2::Compression::fast());
    gz.write_all(&text).unwrap();
    gz.finish().unwrap();
    assert_eq!(read_bal_file(&path).unwrap(), scene);
    let plain = dir.path().join("scene.txt");
    std::fs::write(&plain, &text).unwrap();
    assert_eq!(read_bal_file(&plain).unwrap(), scene);
}

fn parse_error_line(text: &str) -> usize {
    match parse_bal(text.as_bytes()) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn bal_errors_carry_line_numbers() {
    let tail = "0.1\n0.2\n0.3\n1\n2\n-3\n400\n0.01\n0.001\n1\n2\n-4\n";
    assert_eq!(parse_error_line(&format!("1 1 1\n0 3 1.0 2.0\n{tail}")), 2);
    assert_eq!(parse_error_line(&format!("1 1 1\n1 0 1.0 2.0\n{tail}")), 2);
    assert_eq!(parse_error_line(&format!("1 1 1\n0 0 1.0 abc\n{tail}")), 2);
    assert_eq!(parse_error_line("1 1 1\n0 0 1.0 2.0\n0.1\n0.2\nx\n"), 5);
    assert_eq!(parse_error_line("1 1\n"), 1);
    // Too few values: reported at end of input.
    assert!(matches!(parse_bal("1 1 1\n0 0 1.0 2.0\n0.1\n".as_bytes()), Err(Error::Parse { .. })));
    // Too many values.
    assert_eq!(parse_error_line(&format!("1 1 1\n0 0 1.0 2.0\n{tail}7\n")), 15);
    assert!(matches!(read_bal_file(std::path::Path::new("/nonexistent/file.txt")), Err(Error::Io(_))));
}

#[test]
fn ba_solvers_agree_on_a_synthetic_scene() {
    let (bal, x_true) =
        synthetic_scene(SceneOptions { cameras: 5, points: 60, views_per_point: 3, seed: 12, ..SceneOptions::default() })
            .unwrap();
    let p = bal.problem::<f64>();
    let x0 = bal.params();
    let e_true = energy(&p, &x_true).unwrap();
    let mut finals = Vec::new();
    for kind in SolverKind::ALL {
        let config = LmConfig { solver: kind, max_iterations: 60, ..LmConfig::default() };
        let res = minimize(&p, &x0, &config).unwrap();
        let e = res.trace.accepted_energies();
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{kind}");
        finals.push(res.trace.final_energy());
    }
    let best = finals.iter().cloned().fold(f64::INFINITY, f64::min);
    // The least-squares optimum lies at or below the noisy truth.
    assert!(best <= e_true, "best {best} above energy at truth {e_true}");
    for (k, e) in SolverKind::ALL.iter().zip(&finals) {
        assert!((e - best) / best <= 0.02, "{k}: {e} vs best {best}");
    }
}
