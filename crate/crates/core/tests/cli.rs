//! End-to-end runs of the `star-rsma` binary.

use std::path::Path;
use std::process::{Command, Output};

use star_rsma::experiment::{ExperimentConfig, ResultsTable};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_star-rsma")).args(args).current_dir(dir).output().unwrap()
}

const SMALL: &str = r#"
trials = 1
power_dbm = [0.0]
schemes = ["No-RIS-TIN"]

[scenario]
users = 4
bs_antennas = 3
ris_elements = 8
"#;

#[test]
fn print_defaults_echoes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--print-defaults"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--trials", "2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--config", "x.toml", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_config_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "trials = 0\n").unwrap();
    assert_eq!(run(&["--config", "bad.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["--config", "absent.toml"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("ok.toml"), SMALL).unwrap();
    assert_eq!(run(&["--config", "ok.toml", "--power", "5:0:10"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["--config", "ok.toml", "--schemes", "Nope"], dir.path()).status.code(), Some(1));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let out = run(
        &["--config", "c.toml", "--schemes", "No-RIS-TIN", "--power", "0:5:10", "--trials", "2", "--out", "r.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = ResultsTable::from_csv(&std::fs::read_to_string(dir.path().join("r.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 6);
    assert_eq!(table.aggregates.len(), 3);
    assert!(dir.path().join("r.summary.csv").exists());
}

#[test]
fn seed_flag_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    for (seed, out) in [("1", "a.csv"), ("1", "b.csv"), ("2", "c.csv")] {
        let o = run(&["--config", "c.toml", "--seed", seed, "--max-outer", "5", "--tol", "1e-3", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let out = run(&["--config", "c.toml", "--out", "missing/dir/r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
