use std::path::Path;
use std::process::{Command, Output};

fn borrowbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_borrowbench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn analyze_smoke(out: &Path) -> Output {
    borrowbench(&[
        "analyze",
        "--builtin",
        "as_binary",
        "--methods",
        "current_only,mem",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn analyze_writes_results_and_forest() {
    let dir = tempfile::tempdir().unwrap();
    let out = analyze_smoke(dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("results.json").exists());
    assert!(dir.path().join("forest.csv").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("mem") && l.contains("EHSS")));

    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("results.json")).unwrap()).unwrap();
    // the effective configuration is part of the output
    assert_eq!(json["run"]["seed"], 1);
    assert!(json["run"]["configs"]["mem"]["inclusion_prior"].is_object());
}

#[test]
fn same_seed_gives_identical_results_json() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(analyze_smoke(a.path()).status.code(), Some(0));
    assert_eq!(analyze_smoke(b.path()).status.code(), Some(0));
    let ra = std::fs::read(a.path().join("results.json")).unwrap();
    let rb = std::fs::read(b.path().join("results.json")).unwrap();
    assert_eq!(ra, rb);
    assert!(a.path().join("metadata.json").exists());
}

#[test]
fn continuous_without_sd_or_sigma_ref_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("no_sd.csv");
    std::fs::write(&csv, "role,label,n,mean\nH,H1,40,-5.1\nCC,T,20,-4.0\nCT,T,40,-6.0\n").unwrap();
    let out = borrowbench(&["analyze", "--data", csv.to_str().unwrap(), "--endpoint", "continuous", "--methods", "mem"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sd"));

    let out = borrowbench(&["analyze", "--builtin", "adcs_continuous", "--methods", "mem", "--sigma-ref", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_ref"));
}

#[test]
fn config_file_overrides_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out_dir = dir.path().join("o");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"builtin": "as_binary", "methods": ["mem"], "seed": 3, "output_dir": {:?}, "formats": ["json"],
                "mem": {{"inclusion_prior": {{"a": 2.0, "b": 2.0}}}}}}"#,
            out_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = borrowbench(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["run"]["configs"]["mem"]["inclusion_prior"]["a"], 2.0);
    assert!(!out_dir.join("forest.csv").exists());

    std::fs::write(&cfg, r#"{"builtin": "as_binary", "mem": {"no_such_field": 1}}"#).unwrap();
    assert_eq!(borrowbench(&["analyze", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn describe_and_datasets() {
    let out = borrowbench(&["describe", "mem"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Bayesian model averaging over exchangeability patterns"));
    let out = borrowbench(&["describe", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));
    let out = borrowbench(&["datasets"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("as_binary") && text.contains("adcs_continuous"));
}
