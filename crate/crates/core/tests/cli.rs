//! End-to-end runs of the `mmot` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mmot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmot")).args(args).env("MMOT_THREADS", "2").output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_solve_diagnose_on_the_sum_preset() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let common = ["--preset", "gs", "--m", "3", "--n", "5", "--dim", "2", "--seed", "42"];
    let out = mmot(&[&common[..], &["--out", gen.to_str().unwrap(), "gen"]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let instance = gen.join("instance.json");
    assert!(instance.exists());

    let solve = dir.path().join("solve");
    let out = mmot(&["--instance", instance.to_str().unwrap(), "--out", solve.to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["coupling.json", "coupling.csv", "duals.json", "duals.csv", "slackness.json", "summary.json", "metadata.json"] {
        assert!(solve.join(f).exists(), "missing {f}");
    }
    let slack = read_json(&solve.join("slackness.json"));
    assert!(slack["max_gap_on_support"].as_f64().unwrap() <= 1e-9);

    let diag = dir.path().join("diag");
    let out = mmot(&["--instance", instance.to_str().unwrap(), "--out", diag.to_str().unwrap(), "diagnose"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let graph = read_json(&diag.join("graph.json"));
    assert_eq!(graph["is_graph"], Value::Bool(true));
    assert!(diag.join("maps.csv").exists());
}

#[test]
fn positive_bilinear_preset_fails_the_tensor_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(&[
        "--preset", "bilinear-pos", "--dim", "2", "--samples", "50", "--out", dir.path().to_str().unwrap(), "check-conditions",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("conditions.json")).unwrap();
    let reports: Value = serde_json::from_str(&text).unwrap();
    let tensor = reports
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["condition"] == "tensor_t")
        .unwrap_or_else(|| panic!("no tensor report in {text}"));
    assert_eq!(tensor["verdict"], "fail");
}

#[test]
fn missing_marginal_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let out = mmot(&["--preset", "gs", "--n", "3", "--out", gen.to_str().unwrap(), "gen"]);
    assert_eq!(out.status.code(), Some(0));
    let missing = gen.join("marginal_1.json");
    std::fs::remove_file(&missing).unwrap();
    let out = mmot(&["--instance", gen.join("instance.json").to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("marginal_1.json"), "{stderr}");
}
