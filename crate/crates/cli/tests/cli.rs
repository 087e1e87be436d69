use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flnids"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

#[test]
fn train_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["train", "--config"])
        .arg(smoke_config())
        .args(["--seed", "3", "--seed", "4", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seeds"], serde_json::json!([3, 4]));
    assert_eq!(summary["all_checks_passed"], serde_json::json!(true));
    let accuracy = fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert_eq!(accuracy.lines().count(), 3, "header plus one row per defense");

    let report = bin().args(["report", "--out"]).arg(&out).output().unwrap();
    assert_eq!(report.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&report.stdout).contains("accuracy"));
}

#[test]
fn privacy_and_evade_run_on_the_smoke_config() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["privacy", "evade"] {
        let out = dir.path().join(cmd);
        let status = bin()
            .arg(cmd)
            .arg("--config")
            .arg(smoke_config())
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "{cmd}");
        assert!(out.join("checks.csv").exists());
    }
}

#[test]
fn invalid_config_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "name = \"bad\"\nseeds = []\n[fl]\nclients = 0\n").unwrap();
    let out = dir.path().join("out");
    let o = bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("clients"), "{err}");
    assert!(!out.exists(), "nothing is written for a rejected config");
}

#[test]
fn report_exits_nonzero_when_a_check_failed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .arg("train")
        .arg("--config")
        .arg(smoke_config())
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let path = out.join("summary.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["checks"][0]["passed"] = false.into();
    v["all_checks_passed"] = false.into();
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let o = bin().args(["report", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAILED"));
}

#[test]
fn missing_summary_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["report", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
