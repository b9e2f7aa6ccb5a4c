use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn blflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BLFLOW_OUT")
        .output()
        .expect("run blflow")
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn lw2d_ball_config_passes_with_tau_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = blflow(&["run", configs().join("lw2d_ball.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = read(dir.path().join("results.csv"));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("experiment,datum,tau,label,lhs,rhs,ratio,bound,pass")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.starts_with("lw2d-ball,") && r.ends_with(",true")));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["experiments"][0]["status"], "pass");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn bad_exponent_exits_two_with_error_in_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = blflow(
        &["run", configs().join("bad_exponent.json").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let summary = read(dir.path().join("summary.json"));
    assert!(summary.contains("ExponentOutOfRange"), "{summary}");
}

#[test]
fn nonlinear_ball_config_reports_fitted_beta() {
    let dir = tempfile::tempdir().unwrap();
    let o = blflow(
        &["run", configs().join("perturbed_lw_nball.json").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path().join("summary.json"))).unwrap();
    for run in summary["runs"].as_array().unwrap() {
        assert!(run["summary"]["beta_fit"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn failed_inequality_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "monotone-flow", "datum": {"catalog": "holder-1d"}, "taus": [0.5, 1.0], "terminal_tol": 1e-12,
            "inputs": [{"seeded": {"seed": 1, "terms": 2}}, {"seeded": {"seed": 2, "terms": 2}}]}"#,
    )
    .unwrap();
    let o = blflow(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_suite_and_bad_config_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = blflow(&["verify", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown suite"));
    let cfg = dir.path().join("typo.json");
    std::fs::write(&cfg, r#"{"experiment": "ball-inequality", "datun": "x.json"}"#).unwrap();
    let o = blflow(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_blflow"))
        .args(["run", configs().join("lw2d_ball.json").to_str().unwrap()])
        .env("BLFLOW_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("results.csv").is_file());
}

#[test]
fn catalog_listing_names_the_standard_data() {
    let o = Command::new(env!("CARGO_BIN_EXE_blflow"))
        .arg("list-catalog")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["loomis-whitney-2d", "young-2-3", "perturbed-lw-eps"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn verify_linear_passes_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(i.to_string());
        let o = blflow(&["verify", "linear", "--seed", "3"], &out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
        csv.push(std::fs::read(out.join("results.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn stored_config_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(
        blflow(&["verify", "lemmas", "--seed", "5"], &first).status.code(),
        Some(0)
    );
    let second = dir.path().join("second");
    let o = blflow(&["run", first.join("config.json").to_str().unwrap()], &second);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(first.join("results.csv")).unwrap(),
        std::fs::read(second.join("results.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(first.join("config.json")).unwrap(),
        std::fs::read(second.join("config.json")).unwrap()
    );
}
