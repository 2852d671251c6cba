//! End-to-end checks of the `superlab` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn superlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superlab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_MARTINGALE: &str = r#"
experiment = "martingale"
seed = 11

[model]
id = "sbm"
beta = 1.0
alpha = 0.5

[simulation]
n = 50
replicates = 20
times = [0.5, 1.0]
"#;

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MARTINGALE);
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = dir.path().join(name);
        let o = superlab(&["run", "--config", &cfg, "--workers", workers, "--out", out.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(["results.csv", "summary.json", "provenance.json"].map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    let csv = String::from_utf8(outputs[0][0].clone()).unwrap();
    assert!(csv.starts_with("replicate,t,metric,value\n"));
    let value = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap();
    assert_eq!(value.split('e').next().unwrap().trim_start_matches('-').replace('.', "").len(), 17);

    let prov: serde_json::Value = serde_json::from_slice(&outputs[0][2]).unwrap();
    assert_eq!(prov["seed"], 11);
    assert_eq!(prov["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MARTINGALE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    superlab(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]);
    superlab(&["run", "--config", &cfg, "--seed", "12", "--out", b.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn two_replicates_warn() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL_MARTINGALE.replace("replicates = 20", "replicates = 2"));
    let out = dir.path().join("out");
    let o = superlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient-replicates"));
    assert!(out.join("results.csv").exists());
}

#[test]
fn invalid_configs_exit_with_clear_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            SMALL_MARTINGALE.replace("alpha = 0.5", "alpha = 0.0"),
            "alpha must be positive",
        ),
        (
            r#"
experiment = "moving_window"
[model]
id = "sbm_drift"
beta = 1.0
c = 1.0
[observables]
speed = 2.0
"#
            .to_string(),
            "c < sqrt(2*beta)",
        ),
        (SMALL_MARTINGALE.replace("seed = 11", "seed = 11\nsede = 3"), "sede"),
    ];
    for (body, needle) in cases {
        let cfg = write_config(dir.path(), &body);
        let o = superlab(&["run", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "expected {needle:?} in {err}");
    }
}

#[test]
fn failed_flag_exits_one() {
    // Two replicates of a five-particle system cannot match the variance.
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_MARTINGALE.replace("replicates = 20", "replicates = 2").replace("n = 50", "n = 5");
    let cfg = write_config(dir.path(), &body);
    let o = superlab(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.starts_with("FAIL w_bar_variance")));
    assert!(String::from_utf8_lossy(&o.stderr).contains("first failed flag: w_bar_variance_t0.5"));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["all_passed"], false);
    assert_eq!(summary["first_failure"], "w_bar_variance_t0.5");
}

#[test]
fn list_examples_and_check_fields() {
    let o = superlab(&["list-examples"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    for id in ["sbm", "sbm_drift", "sbm_outward", "sou_inward", "sou_outward"] {
        assert!(text.lines().any(|l| l.split('\t').next() == Some(id)), "{id} missing");
    }

    let o = superlab(&["check-fields"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8(o.stdout).unwrap().contains("FAIL"));
}
