use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agehazard")).args(args).output().unwrap()
}

fn run_with(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

/// The fixture config pointed at a different flow file.
fn config_for(dir: &Path, flows: &str) -> PathBuf {
    let flow_path = dir.join("flows.txt");
    std::fs::write(&flow_path, flows).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixture("config.json")).unwrap()).unwrap();
    cfg["flow_file"] = serde_json::Value::String(flow_path.display().to_string());
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn analyze_writes_headed_outputs_and_metadata() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with("analyze", &fixture("config.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let headers = [
        ("surface.csv", "time_bin,age_bin,t,a,age_years,median_lor,prob_or_gt_1"),
        ("rho_table.csv", "rho,prior,posterior,p_0.025,p_0.975,marginal_likelihood,ml_0.025,ml_0.975"),
        ("queries.csv", "day,date,age,median_lor,prob_or_gt_1"),
        ("trace_chain0.csv", "iter,rho,lambda,loglik"),
        ("trace_chain1.csv", "iter,rho,lambda,loglik"),
    ];
    for (name, header) in headers {
        assert_eq!(first_line(&out.path().join(name)), header, "{name}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 17);
    assert!(meta["software"].as_str().unwrap().starts_with("agehazard "));
    assert!(meta["config"].is_object());
    let trace = std::fs::read_to_string(out.path().join("trace_chain0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 150);
}

#[test]
fn seed_override_changes_the_chain() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_with("analyze", &fixture("config.json"), a.path(), &["--chains", "1"]).status.success());
    assert!(run_with("analyze", &fixture("config.json"), b.path(), &["--chains", "1", "--seed", "18"]).status.success());
    let ta = std::fs::read(a.path().join("trace_chain0.csv")).unwrap();
    let tb = std::fs::read(b.path().join("trace_chain0.csv")).unwrap();
    assert_ne!(ta, tb);
    assert!(!b.path().join("trace_chain1.csv").exists());
}

#[test]
fn ingest_and_baseline_succeed_on_fixture() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with("ingest", &fixture("config.json"), out.path(), &[]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("80"));
    let o = run_with("baseline", &fixture("config.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first_line(&out.path().join("baseline_report.csv")), "test,statistic,p_value,groups");
    assert_eq!(
        first_line(&out.path().join("quarterly_rates.csv")),
        "quarter_start,age_decade,at_risk,terminations,rate"
    );
}

#[test]
fn malformed_row_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_for(dir.path(), "birth entry sep reason\n1/1/1950 1/1/1990 n/a n/a\n1/1/1951 1/1/1990 n/a\n");
    let o = run_with("ingest", &cfg, &dir.path().join("out"), &[]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn empty_flow_file_ingests_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_for(dir.path(), "");
    let o = run_with("ingest", &cfg, &dir.path().join("out"), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_is_an_error() {
    let o = run(&["analyze", "--config", "/nonexistent/config.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert!(!run(&["frobnicate"]).status.success());
}
