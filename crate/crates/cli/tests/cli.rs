use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rankforge::sir::{generate, ModelId, ModelSpec};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rankforge"));
    cmd.env_remove("RANKFORGE_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn write_model_csv(dir: &Path, model: ModelId, n: usize, seed: u64) -> PathBuf {
    let sample = generate(&ModelSpec::new(model, n, seed)).unwrap();
    let mut text = String::from("y");
    for j in 0..sample.p() {
        text.push_str(&format!(",x{}", j + 1));
    }
    text.push('\n');
    for i in 0..sample.n() {
        text.push_str(&format!("{:e}", sample.y[i]));
        for j in 0..sample.p() {
            text.push_str(&format!(",{:e}", sample.x[(i, j)]));
        }
        text.push('\n');
    }
    let path = dir.join("toy.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn json_of(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn bootstrap_test_reports_the_order_statistic() {
    let dir = TempDir::new().unwrap();
    let input = write_model_csv(dir.path(), ModelId::I, 100, 3);
    let out = run(bin().args(["test", "--input"]).arg(&input).args([
        "--stat", "lambda1", "--m", "1", "--method", "bootstrap", "--boot", "1000", "--alpha",
        "0.05", "--seed", "7",
    ]));
    let doc = json_of(&out);
    let mut reps: Vec<f64> = doc["replicate_values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(reps.len(), 1000);
    reps.sort_by(f64::total_cmp);
    assert_eq!(doc["quantile"].as_f64().unwrap(), reps[949]);
    let stat = doc["statistic"]["value"].as_f64().unwrap();
    assert_eq!(doc["reject"].as_bool().unwrap(), stat > reps[949]);
    assert!(doc["p_value"].as_f64().is_some());
    assert_eq!(doc["spec"]["kind"], "lambda1");
    assert_eq!(doc["data"]["n"], 100);
    assert_eq!(doc["replicate_summary"]["count"], 1000);
}

#[test]
fn asymptotic_test_writes_to_a_file() {
    let dir = TempDir::new().unwrap();
    let input = write_model_csv(dir.path(), ModelId::I, 200, 4);
    let target = dir.path().join("result.json");
    let out = run(bin().args(["test", "--input"]).arg(&input).args([
        "--stat", "lambda2", "--m", "0", "--method", "asymptotic", "--out",
    ])
    .arg(&target));
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(doc["reject"], true);
    assert!(doc["p_value"].is_null());
    assert_eq!(doc["statistic"]["degrees_of_freedom"]["nominal"], 24);
}

#[test]
fn simulate_is_byte_reproducible_and_thread_independent() {
    let args = ["simulate", "--model", "I", "--n", "100", "--reps", "10", "--boot", "50", "--seed", "1"];
    let a = run(bin().args(args));
    let b = run(bin().args(args));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let c = run(bin().args(args).env("RANKFORGE_THREADS", "3"));
    assert_eq!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,m,wood,resc,adj,mc_weights,cb_lambda1,lambda2,cb_lambda2,lambda3,cb_lambda3"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn simulate_writes_sidecar_and_log() {
    let dir = TempDir::new().unwrap();
    let table = dir.path().join("table.csv");
    let log = dir.path().join("log.csv");
    let out = run(bin()
        .args([
            "simulate", "--n", "80,120", "--reps", "4", "--boot", "20", "--ranks", "1",
            "--columns", "lambda2,cb_lambda1", "--out",
        ])
        .arg(&table)
        .arg("--log-details")
        .arg(&log));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(table.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(meta["metadata"]["config"]["reps"], 4);
    assert!(meta["metadata"]["wall_time_secs"].as_f64().is_some());
    let log_text = std::fs::read_to_string(&log).unwrap();
    // Header plus 2 sample sizes × 4 reps × 2 columns.
    assert_eq!(log_text.lines().count(), 1 + 16);
}

#[test]
fn estimate_rank_sweeps() {
    let dir = TempDir::new().unwrap();
    let input = write_model_csv(dir.path(), ModelId::I, 400, 5);
    let out = run(bin().args(["estimate-rank", "--input"]).arg(&input).args([
        "--stat", "lambda2", "--method", "bootstrap", "--boot", "200",
    ]));
    let doc = json_of(&out);
    let d = doc["d_hat"].as_u64().unwrap();
    let trail = doc["trail"].as_array().unwrap();
    assert!(d >= 1);
    assert!(trail.len() as u64 >= d);
    assert_eq!(trail[0]["reject"], true);
}

#[test]
fn missing_value_is_a_usage_error_with_location() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    let mut text = String::from("y,x1,x2\n");
    for i in 0..20 {
        if i == 6 {
            text.push_str("0.5,,1.0\n");
        } else {
            text.push_str(&format!("{i},{},{}\n", i % 3, i % 5));
        }
    }
    std::fs::write(&path, text).unwrap();
    let out = run(bin().args(["test", "--input"]).arg(&path).args(["--m", "0"]));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 8") && err.contains("column 2"), "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    let out = run(bin().args(["test", "--bogus"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = run(bin().args(["simulate", "--columns", "nope"]));
    assert_eq!(out.status.code(), Some(1));
    let out = run(bin().arg("--help"));
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_with_two() {
    // A constant predictor leaves the covariance singular, which the
    // covariance-weighted statistic cannot use.
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("flat.csv");
    let mut text = String::from("y,x1,x2\n");
    for i in 0..40 {
        let x = (i as f64 * 0.37).sin();
        text.push_str(&format!("{},{x},1.0\n", x + 0.01 * i as f64));
    }
    std::fs::write(&path, text).unwrap();
    let out = run(bin().args(["test", "--input"]).arg(&path).args([
        "--stat", "lambda3", "--m", "0", "--method", "asymptotic", "--slices", "3",
    ]));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
