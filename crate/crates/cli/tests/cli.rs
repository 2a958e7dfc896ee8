use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn iklr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iklr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CLUSTERS: &str = "0,0.0,0.1\n0,0.1,0.0\n0,0.05,0.05\n1,0.9,1.0\n1,1.0,0.9\n1,0.95,0.95\n";

/// 40 points, two overlapping classes in three dimensions.
fn synthetic(n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        let label = i % 2;
        let c = if label == 1 { 0.3 } else { -0.3 };
        let a = ((i * 37 % 101) as f64 / 101.0 - 0.5) + c;
        let b = (i * 53 % 89) as f64 / 89.0;
        let d = ((i * 71 % 97) as f64 / 97.0) * 0.5 + c * 0.5;
        out.push_str(&format!("{label},{a},{b},{d}\n"));
    }
    out
}

#[test]
fn gram_writes_matrix_with_tau_header() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "1,0,0,0,0,0,0\n-1,1,1,1,1,1,1\n");
    let out = dir.path().join("k.csv");
    let o = iklr(&["gram", "--data", s(&data), "--kernel", "tl1", "--tau-factor", "0.7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().next().unwrap().starts_with('#'));
    assert!(text.contains("tau=4.2"), "{text}");
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // Normalized points are the two corners of the unit cube: distance 6 > tau.
    assert_eq!(rows.len(), 2);
    assert!((rows[0][0] - 4.2).abs() < 1e-12);
    assert_eq!(rows[0][1], 0.0);
}

#[test]
fn rbf_without_sigma_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", CLUSTERS);
    let out = dir.path().join("k.csv");
    let o = iklr(&["gram", "--data", s(&data), "--kernel", "rbf", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--sigma"));
    assert!(!out.exists());
}

#[test]
fn decompose_reports_known_spectrum() {
    let dir = TempDir::new().unwrap();
    let k = write(&dir, "k.csv", "0,1\n1,0\n");
    let o = iklr(&["decompose", "--kernel-matrix", s(&k)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let field = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!((field("mu_min") + 1.0).abs() < 1e-12);
    assert!((field("mu_max") - 1.0).abs() < 1e-12);
    assert_eq!(field("v"), 1.0);
    assert!((field("rho") - (1.0 + 1e-6)).abs() < 1e-12);
    assert!(text.contains("indefinite"));
}

#[test]
fn decompose_psd_notes_rho_identity() {
    let dir = TempDir::new().unwrap();
    let k = write(&dir, "k.csv", "2,0.5\n0.5,2\n");
    let plus = dir.path().join("plus.csv");
    let o = iklr(&["decompose", "--kernel-matrix", s(&k), "--out-plus", s(&plus)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("K- = rho I"));
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["v", "2"]));
    assert!(plus.exists());
}

#[test]
fn decompose_rejects_small_rho() {
    let dir = TempDir::new().unwrap();
    let k = write(&dir, "k.csv", "0,1\n1,0\n");
    let o = iklr(&["decompose", "--kernel-matrix", s(&k), "--rho", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = iklr(&["decompose", "--kernel-matrix", s(&k), "--rho", "lots"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", CLUSTERS);
    let model = dir.path().join("m.txt");
    let trace = dir.path().join("trace.csv");
    let o = iklr(&["train", "--data", s(&data), "--model", s(&model), "--trace", s(&trace)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    let outer: usize = report
        .lines()
        .find(|l| l.starts_with("outer_iterations"))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    let trace_text = fs::read_to_string(&trace).unwrap();
    assert_eq!(trace_text.lines().next().unwrap(), "outer_iteration,objective");
    assert_eq!(trace_text.lines().count() - 1, outer + 1);

    let o = iklr(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "accuracy 1.000000");

    let o = iklr(&["predict", "--model", s(&model), "--data", s(&data)]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0], "index,score,label");
    assert_eq!(lines.len(), 7);
    for (i, line) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], i.to_string());
        let score: f64 = f[1].parse().unwrap();
        let want = if i < 3 { "-1" } else { "1" };
        assert_eq!(f[2], want);
        assert_eq!(score > 0.5, want == "1");
    }
}

#[test]
fn cccp_reports_its_epsilon() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", CLUSTERS);
    let model = dir.path().join("m.txt");
    let o = iklr(&["train", "--data", s(&data), "--method", "cccp", "--model", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("epsilon")).unwrap().to_string();
    assert_eq!(line.split_whitespace().nth(1), Some("0.0001"));
    assert!(fs::read_to_string(&model).unwrap().contains("epsilon 1.0000000000000000e-4"));
}

#[test]
fn dimension_mismatch_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", CLUSTERS);
    let wide = write(&dir, "w.csv", "1,0.1,0.2,0.3\n");
    let model = dir.path().join("m.txt");
    assert!(iklr(&["train", "--data", s(&data), "--model", s(&model)]).status.success());
    let o = iklr(&["predict", "--model", s(&model), "--data", s(&wide)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn missing_files_and_bad_labels_fail_cleanly() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.txt");
    let o = iklr(&["train", "--data", "/nonexistent/d.csv", "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(1));
    let bad = write(&dir, "bad.csv", "2,0.5\n");
    let o = iklr(&["train", "--data", s(&bad), "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("label"));
}

#[test]
fn unknown_method_lists_valid_names() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", CLUSTERS);
    let o = iklr(&["benchmark", "--data", s(&data), "--methods", "ccicp,svm"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for name in ["ccicp", "cccp", "flip", "clip", "shift", "klr-psd"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn benchmark_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "syn.csv", &synthetic(40));
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    let args = |out: &Path| {
        vec![
            "benchmark".to_string(),
            "--data".into(),
            s(&data).into(),
            "--methods".into(),
            "ccicp,flip".into(),
            "--repeats".into(),
            "2".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let run = |out: &Path| {
        let a = args(out);
        let o = iklr(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let table = run(&out_a);
    run(&out_b);
    assert!(table.lines().next().unwrap().starts_with("dataset"));
    assert_eq!(table.lines().count(), 3);

    let strip = |p: &Path| -> Vec<Vec<String>> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(4).map(String::from).collect())
            .collect()
    };
    let a = strip(&out_a);
    assert_eq!(a[0], ["dataset", "method", "repeat", "accuracy"]);
    assert_eq!(a.len(), 5);
    assert_eq!(a, strip(&out_b));
    let header = fs::read_to_string(&out_a).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "dataset,method,repeat,accuracy,train_seconds,test_seconds"
    );
    for row in &a[1..] {
        let acc: f64 = row[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn benchmark_klr_psd_uses_rbf() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "syn.csv", &synthetic(30));
    let o = iklr(&[
        "benchmark", "--data", s(&data), "--methods", "klr-psd", "--repeats", "1", "--sigma", "0.8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("klr-psd"));
}
