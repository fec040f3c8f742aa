use std::fs;
use std::process::Command;

fn rwre() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rwre"))
}

#[test]
fn hypotheses_summary_reports_each_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = rwre().args(["hypotheses", "--check", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let data = &v["result"]["data"];
    assert_eq!(data["pass_N"], true);
    assert_eq!(data["pass_M"], true);
    assert_eq!(data["pass_R"], true);
}

#[test]
fn failing_model_is_refused_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = rwre().args(["simulate", "--model", "deterministic-e1", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hypotheses"));
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "steps = 50\n").unwrap();
    let out = rwre()
        .args(["simulate", "--model", "deterministic-e1", "--force", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert!(text.lines().last().unwrap().starts_with("50,50,0,50"));
}

#[test]
fn homogeneous_estimate_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "model = \"deterministic-e1\"\nsteps = 500\nenvironments = 4\nconfirm-horizon = 16\n").unwrap();
    let out = rwre().args(["estimate", "--force", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let data = &v["result"]["data"];
    assert_eq!(data["v_hat"], serde_json::json!([1.0, 0.0]));
    assert_eq!(data["D_hat"], serde_json::json!([[0.0, 0.0], [0.0, 0.0]]));
}

#[test]
fn config_errors_cite_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "replicas = 5\nn-grid = [8, 8]\n").unwrap();
    let out = rwre().args(["variance", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("n-grid"), "{err}");
}

#[test]
fn check_mode_fails_on_violated_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // too few environments to resolve a slope
    fs::write(&cfg, "environments = 2\nwalks-per-env = 4\nn-grid = [4, 8, 16, 32]\n").unwrap();
    let out = rwre().args(["variance", "--check", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("acceptance check failed"));
}
