use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_qrkit-bench");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("QRKIT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every record has as many fields as the header and no field is empty.
fn assert_csv_schema(path: &Path, header: &str) -> usize {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let got: Vec<String> = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(got.join(","), header, "{}", path.display());
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec.len(), got.len());
        assert!(rec.iter().all(|f| !f.is_empty()));
        rows += 1;
    }
    rows
}

#[test]
fn factorize_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.csv");
    let o = run(&["factorize", "--n", "200", "--repeat", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = assert_csv_schema(&out, qrkit_bench::factorize::RUN_HEADER);
    assert_eq!(rows, 3);
}

#[test]
fn factorize_to_stdout() {
    let o = run(&["factorize", "--n", "50", "--repeat", "1", "--solver", "blockbanded", "--precision", "f32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("ellipse,50,blockbanded,f32,0,"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["factorize", "--solver", "spqr"]).status.code(), Some(2));
    assert_eq!(run(&["optimize", "--solver", "lbfgs", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["optimize", "--precision", "f16", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--threads", "0", "factorize", "--n", "10"]).status.code(), Some(2));
}

#[test]
fn missing_and_malformed_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["optimize", "--problem", "ba", "--input", "/nonexistent/problem.txt", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1 1 1\n0 0 1.0 2.0\nnot-a-number\n").unwrap();
    let o = run(&["optimize", "--problem", "ba", "--input", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let csv = dir.path().join("pts.csv");
    std::fs::write(&csv, "x,y\n1,2\n3,oops\n").unwrap();
    let o = run(&["optimize", "--input", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = run(&["optimize", "--problem", "ba", "--dataset", "trafalgar", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("QRKIT_DATA_DIR"));
}

#[test]
fn optimize_writes_trace_summary_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "optimize", "--problem", "ellipse", "--n", "100", "--noise", "0", "--solver", "more-qr", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(assert_csv_schema(&out.join("trace.csv"), qrkit::levmar::TRACE_HEADER) > 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let mut keys: Vec<&str> = summary.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "accepted_steps", "final_energy", "iterations", "precision", "problem", "solver", "status",
            "total_time_s"
        ]
    );
    assert!(summary["final_energy"].as_f64().unwrap() < 1e-10);
    assert_eq!(summary["solver"], "more-qr");
    let svg = std::fs::read_to_string(out.join("convergence.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 2);
}

#[test]
fn ellipse_csv_without_sidecar_starts_from_moments() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("pts.csv");
    let data = qrkit::problems::generate_ellipse_data(80, Default::default(), 0.0, 3).unwrap();
    let mut text = String::from("x,y\n");
    for p in &data.points {
        text.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("run");
    let o = run(&["optimize", "--input", csv.to_str().unwrap(), "--max-iters", "300", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_energy"].as_f64().unwrap() < 1e-10, "{summary}");
}

#[test]
fn bal_file_input_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (bal, _) = qrkit::problems::synthetic_scene(qrkit::problems::SceneOptions::default()).unwrap();
    let path = dir.path().join("scene.txt");
    qrkit::problems::write_bal(&bal, std::fs::File::create(&path).unwrap()).unwrap();
    let out = dir.path().join("run");
    for solver in ["qrkit", "qrkit-cholesky", "more-qr", "cholesky"] {
        let o = run(&[
            "optimize", "--problem", "ba", "--input", path.to_str().unwrap(), "--solver", solver, "--damping",
            "marquardt", "--max-iters", "30", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{solver}: {}", stderr(&o));
    }
}

#[test]
fn sweep_row_count_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep", "--sizes", "20,40", "--solvers", "blockdiag,blockbanded,dense-baseline", "--precisions", "f32,f64",
        "--repeat", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = assert_csv_schema(&out.join("sweep.csv"), qrkit_bench::sweep::SWEEP_HEADER);
    assert_eq!(rows, 2 * 3 * 2);
    assert!(out.join("sweep.svg").is_file());
}

#[test]
fn single_threaded_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap();
    for (k, args) in [
        vec!["factorize", "--n", "300", "--repeat", "2", "--precision", "f32", "--seed", "7"],
        vec!["optimize", "--problem", "ba", "--cameras", "4", "--points", "60", "--seed", "5", "--precision", "f32"],
        vec!["sweep", "--sizes", "30,60", "--repeat", "1", "--precisions", "f32,f64"],
    ]
    .into_iter()
    .enumerate()
    {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let target = dir.path().join(format!("{k}-{rep}"));
            let mut full = vec!["--threads", "1", "--no-timing"];
            full.extend(&args);
            let t = target.to_str().unwrap().to_owned();
            let file = format!("{t}.csv");
            full.extend(["--out", if args[0] == "factorize" { file.as_str() } else { t.as_str() }]);
            let o = run(&full);
            assert!(o.status.success(), "{}", stderr(&o));
            outputs.push(match args[0] {
                "factorize" => read(Path::new(&file)),
                "optimize" => read(&target.join("trace.csv")),
                _ => read(&target.join("sweep.csv")),
            });
        }
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }
}
