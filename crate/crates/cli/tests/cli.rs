mod common;

use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use common::{small_run_config, small_spec};
use serde_json::Value;

fn longic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longic"))
        .args(args)
        .env_remove("LONGIC_OUT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_identical_files_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("gen.toml");
    std::fs::write(&spec, small_spec(3).to_toml().unwrap()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = longic(&["generate", "--config", path(&spec), "--seed", "11", "--out", path(dir)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in ["cohort.toml", "visit_1.csv", "visit_2.csv", "visit_3.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn generate_rejects_non_nested_missingness() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = small_spec(3);
    spec.missing = vec![vec!["sbp".into()], vec![]];
    let file = tmp.path().join("gen.toml");
    std::fs::write(&file, spec.to_toml().unwrap()).unwrap();
    let out = longic(&["generate", "--config", path(&file), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sbp"), "{}", stderr(&out));
}

#[test]
fn run_writes_one_directory_per_experiment_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run_config(tmp.path(), 5);
    let mut reports = Vec::new();
    for base in ["r1", "r2"] {
        let out_dir = tmp.path().join(base);
        let out = longic(&["run", "--config", path(&cfg), "--out", path(&out_dir)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let printed: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
        assert_eq!(printed.len(), 3);
        let runs: Vec<_> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().path()).collect();
        assert_eq!(runs.len(), 1);
        assert!(runs[0].file_name().unwrap().to_str().unwrap().ends_with("-seed5"));
        let mut bytes = Vec::new();
        for e in 1..=3 {
            let dir = runs[0].join(format!("experiment{e}"));
            assert!(printed.iter().any(|p| Path::new(p) == dir));
            bytes.push(std::fs::read(dir.join("report.json")).unwrap());
        }
        reports.push(bytes);
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn run_rejects_unknown_experiments() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run_config(tmp.path(), 5);
    let out = longic(&["run", "--config", path(&cfg), "--out", path(tmp.path()), "--experiments", "1,4"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown experiment 4"));
    let missing = longic(&["run", "--config", path(&tmp.path().join("absent.toml"))]);
    assert_eq!(code(&missing), 2);
}

fn recommend(cfg: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["recommend", "--config", path(cfg)];
    args.extend_from_slice(extra);
    longic(&args)
}

#[test]
fn recommend_respects_budget_and_locks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run_config(tmp.path(), 6);
    let parse = |out: Output| -> Value {
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        serde_json::from_slice(&out.stdout).unwrap()
    };
    let zero = parse(recommend(&cfg, &["--patient", "p00001", "--budget", "0"]));
    assert!(zero["delta"].as_array().unwrap().iter().all(|d| d.as_f64() == Some(0.0)));
    let two = parse(recommend(&cfg, &["--patient", "p00001", "--budget", "2"]));
    assert!(two["cost_spent"].as_f64().unwrap() <= 2.0 + 1e-9);
    assert!(two["after_probability"].as_f64() <= two["before_probability"].as_f64());
    assert_eq!(two["trajectory"].as_array().unwrap().len(), 3);

    let locked = parse(recommend(
        &cfg,
        &["--patient", "p00001", "--budget", "4", "--cost", "exercise_hours=locked", "--bound", "sodium=:4000"],
    ));
    let features = locked["features"].as_array().unwrap();
    let exercise = features.iter().find(|f| f["name"] == "exercise_hours").unwrap();
    assert_eq!(exercise["after_raw"], exercise["before_raw"]);
    let sodium = features.iter().find(|f| f["name"] == "sodium").unwrap();
    assert!(sodium["after_raw"].as_f64().unwrap() <= 4000.0);
}

#[test]
fn recommend_reports_unknown_patients_and_bad_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run_config(tmp.path(), 6);
    let out = recommend(&cfg, &["--patient", "nobody", "--budget", "1"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("nobody"));
    assert_eq!(code(&recommend(&cfg, &["--patient", "p00001", "--budget", "1", "--cost", "age=1"])), 2);
    assert_eq!(code(&recommend(&cfg, &["--patient", "p00001", "--budget", "1", "--cost", "sodium"])), 2);
    assert_eq!(code(&recommend(&cfg, &["--patient", "p00001", "--budget", "-1"])), 2);
}

#[test]
fn serve_exits_when_the_address_is_taken() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run_config(tmp.path(), 7);
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let out = longic(&["serve", "--config", path(&cfg), "--bind", &addr]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}
