use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rwgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwgd")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = configs().join(config);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    rwgd(&args)
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn categorical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run("simulate", "categorical.json", a.path(), &[]).status.success());
    // thread count must not change the output
    assert!(run("simulate", "categorical.json", b.path(), &["--threads", "3"]).status.success());
    for f in ["trajectory.csv", "ensemble.csv", "resolved.json"] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    assert!(run("simulate", "categorical.json", c.path(), &["--seed", "43"]).status.success());
    assert_ne!(read(a.path().join("ensemble.csv")), read(c.path().join("ensemble.csv")));
}

#[test]
fn identity_reproduces_gradient_descent() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run("simulate", "identity.json", dir.path(), &["--no-plot"]).status.success());
    assert!(!dir.path().join("simulate.svg").exists());
    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    // plain GD on the inline data: w ← w − α Xᵀ(Xw − y)
    let x = [[1.0, 0.4], [-0.3, 0.8], [0.2, -0.1]];
    let y = [1.0, -0.5, 0.7];
    let mut w = [0.0f64; 2];
    for row in &rows {
        assert!((row[1] - w[0]).abs() <= 1e-12 && (row[2] - w[1]).abs() <= 1e-12, "k = {}", row[0]);
        let alpha = row[3];
        let mut g = [0.0; 2];
        for (xi, yi) in x.iter().zip(y) {
            let e = xi[0] * w[0] + xi[1] * w[1] - yi;
            g[0] += xi[0] * e;
            g[1] += xi[1] * e;
        }
        w = [w[0] - alpha * g[0], w[1] - alpha * g[1]];
    }
    let mut ens = csv::Reader::from_path(dir.path().join("ensemble.csv")).unwrap();
    for r in ens.records() {
        assert_eq!(&r.unwrap()[2], "0");
    }
}

#[test]
fn missing_config_exits_2_naming_path() {
    let out = rwgd(&["moments", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cfg.json"));
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"k_max": 5, "colour": "red"}"#).unwrap();
    let out = rwgd(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn guard_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big_step.json");
    std::fs::write(
        &cfg,
        r#"{
  "dataset": { "inline": { "x": [[1.0, 0.0], [0.0, 2.0]], "y": [1.0, 1.0] } },
  "scheme": { "variant": "uniform" },
  "schedule": { "variant": "constant", "alpha": 50.0 },
  "k_max": 10, "n_traj": 2
}"#,
    )
    .unwrap();
    let out = rwgd(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oracle_batteries() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("oracle", "oracle.json", dir.path(), &[]).status.code(), Some(0));
    assert_eq!(run("oracle", "oracle_identity.json", dir.path(), &[]).status.code(), Some(0));
    let over = run("oracle", "oracle_over_budget.json", dir.path(), &[]);
    assert_eq!(over.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&over.stderr).contains("cap is 65536"));
}

#[test]
fn oracle_tables_share_the_moments_schema() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run("oracle", "oracle_identity.json", dir.path(), &[]).status.success());
    let mut a = csv::Reader::from_path(dir.path().join("oracle_identity_0.csv")).unwrap();
    let oracle_header = a.headers().unwrap().clone();
    assert!(run("moments", "identity.json", dir.path(), &[]).status.success());
    let mut b = csv::Reader::from_path(dir.path().join("moments.csv")).unwrap();
    assert_eq!(&oracle_header, b.headers().unwrap());
    // identity weights leave no variance: A_k = m_k m_kᵀ
    for r in b.records() {
        let r = r.unwrap();
        let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap_or(f64::NAN)).collect();
        let (m1, m2) = (v[6], v[7]);
        assert!((v[8] - m1 * m1).abs() <= 1e-14 && (v[9] - m1 * m2).abs() <= 1e-14 && (v[11] - m2 * m2).abs() <= 1e-14);
    }
}

#[test]
fn bounds_report_lists_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("bounds", "categorical.json", dir.path(), &[]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("bounds.json"))).unwrap();
    let checks = report["assumptions"]["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["passed"].as_bool().unwrap()));
    let names: Vec<&str> = report["bounds"].as_array().unwrap().iter().map(|b| b["name"].as_str().unwrap()).collect();
    for n in ["mean_rate", "second_moment_rate", "gmc_rate", "variance_ceiling"] {
        assert!(names.contains(&n), "{n}");
    }
}
