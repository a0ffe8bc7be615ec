use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_assignqp"))
        .args(args)
        .current_dir(dir)
        .env_remove("ASSIGNQP_LOG")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

/// Two coupled pairs, scaled so the binary-KKT threshold is about 1.06.
const SMALL: &str = r#"{"n":4,"m":2,
 "A":[0.02,0.01,0,0, 0.01,0.02,0,0, 0,0,0.02,0.01, 0,0,0.01,0.02],
 "G":[0.01,-0.01, 0.005,0, -0.01,0.01, 0,0.003]}"#;

const IDENTITY: &str = r#"{"n":4,"m":2,"A":[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1],"G":[0,0,0,0,0,0,0,0]}"#;

const TOY_CSV: &str = "x,y\n0,0\n0.1,0\n10,10\n10.1,10\n";

#[test]
fn thresholds_of_identity() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.json", IDENTITY);
    let out = run(tmp.path(), &["thresholds", "p.json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!((v["concavity"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    assert!((v["equivalence"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    assert!(v["kkt_binary"].as_f64().unwrap() > 0.0);
    assert_eq!(v["beta_min_for_eta"].as_f64(), Some(0.25));
    assert_eq!(v["ok"], Value::Bool(true));

    let out = run(tmp.path(), &["thresholds", "p.json", "--eta", "100"]);
    assert_eq!(stdout_json(&out)["ok"], Value::Bool(false));
}

#[test]
fn solve_above_threshold_is_binary_with_artifacts() {
    let tmp = TempDir::new().unwrap();
    let problem = write(tmp.path(), "p.json", SMALL);
    let out = run(tmp.path(), &["solve", "p.json", "--eta", "1.1", "--out", "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["termination"], "converged_binary");
    let assignment: Vec<u64> = serde_json::from_value(v["assignment"].clone()).unwrap();
    assert_eq!(assignment.len(), 8);
    for row in assignment.chunks(2) {
        assert_eq!(row.iter().sum::<u64>(), 1);
    }
    assert_eq!(v["feasibility"]["is_assignment"], Value::Bool(true));

    let run_dir = tmp.path().join("run");
    let trace = fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("k,h,p,lagrangian,nonbinary_fraction,lambda_norm,objective\n"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "solve");
    assert_eq!(manifest["config"]["solver"]["eta"].as_f64(), Some(1.1));
    assert_eq!(manifest["config"]["solver"]["beta"].as_f64(), Some(20.0));
    let digest = hex::encode(Sha256::digest(fs::read(&problem).unwrap()));
    assert_eq!(manifest["inputs"][0]["sha256"].as_str(), Some(digest.as_str()));
    let mut names: Vec<String> = fs::read_dir(&run_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["manifest.json", "solution.json", "trace.csv"]);
}

#[test]
fn solve_exit_codes() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.json", SMALL);
    write(tmp.path(), "zero.json", r#"{"n":4,"m":2,"A":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0],"G":[0,0,0,0,0,0,0,0]}"#);
    assert_eq!(run(tmp.path(), &["solve", "p.json", "--eta", "1.1", "--max-iter", "1"]).status.code(), Some(3));
    // without a regularizer the barycentre is a fixed point
    assert_eq!(run(tmp.path(), &["solve", "zero.json", "--eta", "0"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["solve", "missing.json"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["solve", "p.json", "--beta", "-1"]).status.code(), Some(1));
}

#[test]
fn malformed_json_reports_location() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.json", "{\"n\": 4,\n \"m\": }");
    let out = run(tmp.path(), &["solve", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["line"].as_u64(), Some(2));
    assert!(err["column"].as_u64().unwrap() > 0);
    assert!(out.stdout.is_empty());

    write(tmp.path(), "short.json", r#"{"n":4,"m":2,"A":[1,2],"G":[0,0,0,0,0,0,0,0]}"#);
    assert_eq!(run(tmp.path(), &["thresholds", "short.json"]).status.code(), Some(1));
}

#[test]
fn oracle_bounds_solve_output() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.json", SMALL);
    let solved = run(tmp.path(), &["solve", "p.json", "--eta", "1.1", "--out", "s"]);
    assert_eq!(solved.status.code(), Some(0));
    let out = run(tmp.path(), &["oracle", "p.json", "--solution", "s/solution.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["candidates"], "6");
    assert!(v["gap"].as_f64().unwrap() >= -1e-9);
    let x: Vec<u64> = serde_json::from_value(v["X_opt"].clone()).unwrap();
    assert_eq!(x.len(), 8);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn oracle_refuses_large_problems() {
    let tmp = TempDir::new().unwrap();
    let n = 20;
    let a: Vec<String> = (0..n * n).map(|k| if k % (n + 1) == 0 { "1".into() } else { "0".into() }).collect();
    let body = format!(r#"{{"n":{n},"m":2,"A":[{}],"G":[{}]}}"#, a.join(","), vec!["0"; 2 * n].join(","));
    write(tmp.path(), "big.json", &body);
    let out = run(tmp.path(), &["oracle", "big.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("184756"));
}

#[test]
fn mmd_select_strategies() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "d.csv", TOY_CSV);
    let out = run(tmp.path(), &["mmd-select", "d.csv", "--m", "2", "--all", "--out", "sel"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let cmp = &v["comparison"];
    for s in ["random", "vector", "matrix"] {
        assert!(cmp[s].as_f64().unwrap() >= 0.0);
    }
    assert!(cmp["matrix"].as_f64().unwrap() <= cmp["random"].as_f64().unwrap());
    let matrix = v["plans"].as_array().unwrap().iter().find(|p| p["strategy"] == "matrix").unwrap();
    for batch in matrix["batches"].as_array().unwrap() {
        let batch: Vec<u64> = serde_json::from_value(batch.clone()).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.iter().filter(|&&i| i < 2).count(), 1);
    }
    assert!(tmp.path().join("sel/plan.json").exists());

    let a = run(tmp.path(), &["mmd-select", "d.csv", "--m", "2", "--strategy", "random", "--seed", "7"]);
    let b = run(tmp.path(), &["mmd-select", "d.csv", "--m", "2", "--strategy", "random", "--seed", "7"]);
    assert_eq!(a.stdout, b.stdout);

    let csv = run(tmp.path(), &["mmd-select", "d.csv", "--m", "2", "--format", "csv"]);
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("strategy,mmd\nmatrix,"));

    assert_eq!(run(tmp.path(), &["mmd-select", "d.csv", "--m", "3"]).status.code(), Some(1));
    write(tmp.path(), "bad.csv", "1,2\n3\n");
    assert_eq!(run(tmp.path(), &["mmd-select", "bad.csv", "--m", "1"]).status.code(), Some(1));
}

#[test]
fn synth_bench_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "synth-bench",
        "--group-sizes",
        "4,4",
        "--dim",
        "3",
        "--epochs",
        "20",
        "--checkpoints",
        "10,20",
        "--seeds",
        "2",
        "--batch-size",
        "2",
        "--format",
        "csv",
    ];
    let mut first = args.to_vec();
    first.extend(["--out", "a"]);
    let mut second = args.to_vec();
    second.extend(["--out", "b", "--threads", "1"]);
    let a = run(tmp.path(), &first);
    let b = run(tmp.path(), &second);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let summary = fs::read_to_string(tmp.path().join("a/summary.csv")).unwrap();
    assert_eq!(summary, String::from_utf8(a.stdout).unwrap());
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "optimizer,metric,epoch,random,vector,matrix");
    // three optimizers, two metrics, two checkpoints
    assert_eq!(lines.len(), 1 + 3 * 2 * 2);
    let runs = fs::read_dir(tmp.path().join("a/runs")).unwrap().count();
    assert_eq!(runs, 3 * 3 * 2);
    assert_eq!(
        fs::read(tmp.path().join("a/runs/matrix_adam_seed1.csv")).unwrap(),
        fs::read(tmp.path().join("b/runs/matrix_adam_seed1.csv")).unwrap()
    );
}

#[test]
fn nothing_written_without_out() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.json", SMALL);
    let out = run(tmp.path(), &["solve", "p.json", "--eta", "1.1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}
