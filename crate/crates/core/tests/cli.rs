use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ate_harness::harness::{load_experiment, run_experiment, CONFIG_FILE, REPORT_FILE, RUNS_FILE};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ate-harness"));
    cmd.env_remove("ATE_HARNESS_THREADS");
    cmd
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&std::ffi::OsStr]) -> Output {
    bin().args(args).output().unwrap()
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[test]
fn validate_reports_success_and_failure() {
    let ok = run(&["validate".as_ref(), config("tutorial.toml").as_os_str()]);
    assert_eq!(ok.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(config("tutorial.toml")).unwrap().replace("design =", "desing =");
    fs::write(&bad, text).unwrap();
    let out = run(&["validate".as_ref(), bad.as_os_str()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("desing"));

    let missing = run(&["validate".as_ref(), dir.path().join("nope.toml").as_os_str()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn tutorial_config_parses() {
    let spec = load_experiment(&config("tutorial.toml")).unwrap();
    assert_eq!(spec.systems, Some(200));
    assert_eq!(spec.design, ate_harness::sampling::Design::Paired);
}

#[test]
fn every_shipped_report_matches_the_schema() {
    let validator = schema();
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let cfg = entry.unwrap().path();
        let out = dir.path().join(cfg.file_stem().unwrap());
        let status = run(&["run".as_ref(), cfg.as_os_str(), "--out".as_ref(), out.as_os_str()]);
        assert!(status.status.success(), "{}: {}", cfg.display(), String::from_utf8_lossy(&status.stderr));
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", cfg.display());
        assert_eq!(fs::read(out.join(CONFIG_FILE)).unwrap(), fs::read(&cfg).unwrap());
    }
}

#[test]
fn runs_table_has_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    for (name, rows) in [("heterogeneity.toml", 60), ("broad.toml", 400)] {
        let out = dir.path().join(name);
        assert!(run(&["run".as_ref(), config(name).as_os_str(), "-o".as_ref(), out.as_os_str()]).status.success());
        let csv = fs::read_to_string(out.join(RUNS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), rows + 1, "{name}");
    }
    let report = fs::read_to_string(dir.path().join("broad.toml").join(REPORT_FILE)).unwrap();
    assert!(!report.contains("\"ites\""));
}

#[test]
fn report_rerenders_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    assert!(run(&["run".as_ref(), config("heterogeneity.toml").as_os_str(), "-o".as_ref(), out.as_os_str()])
        .status
        .success());
    let rendered = run(&["report".as_ref(), out.as_os_str(), "--json".as_ref()]);
    assert!(rendered.status.success());
    assert_eq!(rendered.stdout, fs::read(out.join(REPORT_FILE)).unwrap());
    let summary = run(&["report".as_ref(), out.as_os_str()]);
    assert!(String::from_utf8_lossy(&summary.stdout).contains("ATE"));
}

#[test]
fn oracle_subcommand_is_exhaustive() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = run(&["oracle".as_ref(), config("toy_exhaustive.toml").as_os_str(), "-o".as_ref(), out.as_os_str()]);
    assert!(status.status.success());
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(doc["report"]["design"], "exhaustive");

    // No universe section: the exact route is a configuration error.
    let none = run(&["oracle".as_ref(), config("heterogeneity.toml").as_os_str(), "-o".as_ref(), out.as_os_str()]);
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn simulate_summarizes_replications() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("reps.jsonl");
    let out = run(&[
        "simulate".as_ref(),
        config("synthetic_paired.toml").as_os_str(),
        "--replications".as_ref(),
        "5".as_ref(),
        "--out".as_ref(),
        rows.as_os_str(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["replications"], 5);
    assert_eq!(fs::read_to_string(rows).unwrap().lines().count(), 5);

    let text = run(&["simulate".as_ref(), config("tutorial.toml").as_os_str()]);
    assert_eq!(text.status.code(), Some(1));
}

#[test]
fn empty_universe_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.toml");
    let text = fs::read_to_string(config("heterogeneity.toml")).unwrap() + "\n[universe]\nseeds = []\n";
    fs::write(&cfg, text).unwrap();
    let out = run(&["run".as_ref(), cfg.as_os_str(), "-o".as_ref(), dir.path().join("o").as_os_str()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn toy_population_regression_values() {
    // Exact EGEs of the toy text population, pinned after the first computation.
    let spec = load_experiment(&config("toy_exhaustive.toml")).unwrap();
    let report = run_experiment(&spec, Some(2)).unwrap().report;
    // 60 systems x 10 test documents: 272 and 278 errors out of 600.
    assert!((report.ege_treatment.value - 272.0 / 600.0).abs() <= 1e-12);
    assert!((report.ege_control.value - 278.0 / 600.0).abs() <= 1e-12);
    assert!((report.ate - -0.01).abs() <= 1e-12);
}
