//! Power-sweep harness: table shape, pairing, determinism and file output.

use std::collections::HashSet;

use star_rsma::channel::ScenarioConfig;
use star_rsma::experiment::{
    emit, fmt_float, run_power_sweep, summary_path, ExperimentConfig, OutputFormat, ResultsTable, CSV_HEADER,
};

fn quick(schemes: &[&str], powers: &[f64], trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        trials,
        power_dbm: powers.to_vec(),
        schemes: schemes.iter().map(|s| s.parse().unwrap()).collect(),
        scenario: ScenarioConfig { users: 4, bs_antennas: 3, ris_elements: 8, ..ScenarioConfig::default() },
        seed: 17,
        ..ExperimentConfig::default()
    }
}

fn rounded(t: &ResultsTable) -> ResultsTable {
    let r = |x: f64| fmt_float(x).parse::<f64>().unwrap();
    let mut out = t.clone();
    for row in &mut out.rows {
        row.power_dbm = r(row.power_dbm);
        row.rate_bits = r(row.rate_bits);
        row.wall_s = r(row.wall_s);
        row.instance = 0;
    }
    for a in &mut out.aggregates {
        a.power_dbm = r(a.power_dbm);
        a.mean = r(a.mean);
        a.mean_iters = r(a.mean_iters);
        a.mean_wall_s = r(a.mean_wall_s);
        a.n_ok = 0;
        a.n_failed = 0;
        a.stderr = 0.0;
    }
    out
}

#[test]
fn one_cell_gives_one_row_and_one_aggregate() {
    let table = run_power_sweep(&quick(&["No-RIS-TIN"], &[10.0], 1)).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.aggregates.len(), 1);
    assert_eq!(table.aggregates[0].mean, table.rows[0].rate_bits);
    assert_eq!(table.aggregates[0].stderr, 0.0);
    assert_eq!(table.to_csv().unwrap().lines().count(), 3);
}

#[test]
fn rows_cover_every_cell_once() {
    let cfg = quick(&["No-RIS-TIN", "No-RIS-RS"], &[0.0, 10.0, 20.0], 2);
    let table = run_power_sweep(&cfg).unwrap();
    assert_eq!(table.rows.len(), 12);
    let keys: HashSet<(String, u64, usize)> =
        table.rows.iter().map(|r| (r.scheme.clone(), r.power_dbm.to_bits(), r.trial)).collect();
    assert_eq!(keys.len(), 12);
    assert_eq!(table.aggregates.len(), 6);
    for a in &table.aggregates {
        assert_eq!(a.n_ok + a.n_failed, 2);
    }
}

#[test]
fn schemes_and_powers_share_the_trial_channel() {
    let cfg = quick(&["No-RIS-TIN", "No-RIS-RS", "STAR-RIS-RS"], &[0.0, 20.0], 3);
    let table = run_power_sweep(&cfg).unwrap();
    for trial in 0..3 {
        let prints: HashSet<u64> = table.rows.iter().filter(|r| r.trial == trial).map(|r| r.instance).collect();
        assert_eq!(prints.len(), 1, "trial {trial}");
    }
    let all: HashSet<u64> = table.rows.iter().map(|r| r.instance).collect();
    assert_eq!(all.len(), 3);
}

#[test]
fn same_seed_same_table() {
    let cfg = quick(&["No-RIS-RS", "Rand-RIS-RS_I"], &[5.0], 2);
    let a = run_power_sweep(&cfg).unwrap();
    let b = run_power_sweep(&cfg).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    let c = run_power_sweep(&ExperimentConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.to_csv().unwrap(), c.to_csv().unwrap());
}

#[test]
fn csv_round_trip() {
    let table = run_power_sweep(&quick(&["No-RIS-TIN", "STAR-RIS-RS_I"], &[0.0, 10.0], 2)).unwrap();
    let csv = table.to_csv().unwrap();
    assert!(csv.starts_with(&format!("{CSV_HEADER}\n")));
    let back = ResultsTable::from_csv(&csv).unwrap();
    assert_eq!(back, rounded(&table));
    assert_eq!(back.to_csv().unwrap(), csv);
}

#[test]
fn emitted_files() {
    let table = run_power_sweep(&quick(&["No-RIS-TIN"], &[0.0, 10.0], 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let csv_path = dir.path().join("out.csv");
    emit(&table, OutputFormat::Csv, &csv_path).unwrap();
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), table.to_csv().unwrap());
    let summary = std::fs::read_to_string(summary_path(&csv_path)).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "scheme,power_dBm,n_ok,n_failed,mean,stderr");
    assert_eq!(summary.lines().count(), 3);

    let jl_path = dir.path().join("out.jsonl");
    emit(&table, OutputFormat::JsonLines, &jl_path).unwrap();
    let text = std::fs::read_to_string(&jl_path).unwrap();
    assert_eq!(text.lines().count(), table.rows.len() + table.aggregates.len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected: Vec<&str> = CSV_HEADER.split(',').collect();
        let mut got = keys.clone();
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, expected);
    }

    let missing = dir.path().join("no/such/dir/out.csv");
    assert!(emit(&table, OutputFormat::Csv, &missing).is_err());
}
