//! Monte Carlo power sweeps over the compared schemes.
//!
//! Each trial draws one channel realization from a seed derived from the
//! master seed and the trial index. All schemes and power points of that
//! trial run on the same realization, so scheme differences are paired.
//! Cells run in parallel; the table is assembled in a fixed order afterwards
//! and does not depend on scheduling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{optimize, AoOptions, SchemeSpec};
use crate::channel::{generate_network, NetworkInstance, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fbl::FblParams;
use crate::rng::derive_seed;

/// One value for every user, or an explicit per-user list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    Uniform(f64),
    List(Vec<f64>),
}

impl PerUser {
    fn expand(&self, users: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            PerUser::Uniform(v) => Ok(vec![*v; users]),
            PerUser::List(v) if v.len() == users => Ok(v.clone()),
            PerUser::List(v) => Err(Error::Config(format!("{name} lists {} values for {users} users", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FblConfig {
    pub eps_common: f64,
    pub eps_private: PerUser,
    pub n_common: f64,
    pub n_private: PerUser,
}

impl Default for FblConfig {
    fn default() -> Self {
        Self {
            eps_common: 1e-5,
            eps_private: PerUser::Uniform(1e-5),
            n_common: 256.0,
            n_private: PerUser::Uniform(256.0),
        }
    }
}

impl FblConfig {
    pub fn params(&self, users: usize) -> Result<FblParams> {
        let p = FblParams {
            eps_common: self.eps_common,
            eps_private: self.eps_private.expand(users, "eps_private")?,
            n_common: self.n_common,
            n_private: self.n_private.expand(users, "n_private")?,
        };
        p.validate(users)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub power_dbm: Vec<f64>,
    pub schemes: Vec<SchemeSpec>,
    pub output: PathBuf,
    pub format: OutputFormat,
    /// Write measured solve times. Off by default so that repeated runs
    /// produce identical files; `wall_s` is then written as 0.
    pub record_wall_time: bool,
    pub scenario: ScenarioConfig,
    pub fbl: FblConfig,
    pub ao: AoOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 25,
            power_dbm: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            schemes: SchemeSpec::default_schemes(),
            output: PathBuf::from("results.csv"),
            format: OutputFormat::Csv,
            record_wall_time: false,
            scenario: ScenarioConfig::default(),
            fbl: FblConfig::default(),
            ao: AoOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.schemes.is_empty() || self.power_dbm.is_empty() {
            return Err(Error::Config("schemes and power grid must be nonempty".into()));
        }
        if let Some(p) = self.power_dbm.iter().find(|p| !p.is_finite()) {
            return Err(Error::Config(format!("power {p} dBm is not finite")));
        }
        self.scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.fbl.params(self.scenario.users).map_err(|e| Error::Config(e.to_string()))?;
        self.ao.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Parses `start:step:stop` (inclusive) or a single value, in dBm.
pub fn parse_power_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("bad power value {s:?}")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [a, b, c] => {
            let (start, step, stop) = (num(a)?, num(b)?, num(c)?);
            if !(step > 0.0) || stop < start {
                return Err(Error::Config(format!("power range {text:?} needs step > 0 and stop >= start")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| start + step * i as f64).collect())
        }
        _ => Err(Error::Config(format!("power range {text:?} is not start:step:stop"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub scheme: String,
    pub power_dbm: f64,
    pub trial: usize,
    /// NaN for a failed trial.
    pub rate_bits: f64,
    pub iters: usize,
    pub wall_s: f64,
    /// Fingerprint of the channel draw; not written to the table file.
    #[serde(skip)]
    pub instance: u64,
    #[serde(skip)]
    pub error: Option<String>,
}

impl TrialRow {
    pub fn failed(&self) -> bool {
        self.error.is_some() || !self.rate_bits.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scheme: String,
    pub power_dbm: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub stderr: f64,
    pub mean_iters: f64,
    pub mean_wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Mean and standard error per (scheme, power), in order of first
/// appearance. Failed rows are counted but excluded; groups without a single
/// successful row are dropped.
pub fn aggregate(rows: &[TrialRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(s, p)| *s == r.scheme && p.to_bits() == r.power_dbm.to_bits()) {
            keys.push((r.scheme.clone(), r.power_dbm));
        }
    }
    keys.into_iter()
        .filter_map(|(scheme, power)| {
            let group: Vec<&TrialRow> =
                rows.iter().filter(|r| r.scheme == scheme && r.power_dbm.to_bits() == power.to_bits()).collect();
            let ok: Vec<&&TrialRow> = group.iter().filter(|r| !r.failed()).collect();
            let n_failed = group.len() - ok.len();
            if ok.is_empty() {
                warn!("no successful trial for {scheme} at {power} dBm; aggregate omitted");
                return None;
            }
            let n = ok.len() as f64;
            let mean = ok.iter().map(|r| r.rate_bits).sum::<f64>() / n;
            let stderr = if ok.len() > 1 {
                let var = ok.iter().map(|r| (r.rate_bits - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            Some(AggregateRow {
                scheme,
                power_dbm: power,
                n_ok: ok.len(),
                n_failed,
                mean,
                stderr,
                mean_iters: ok.iter().map(|r| r.iters as f64).sum::<f64>() / n,
                mean_wall_s: ok.iter().map(|r| r.wall_s).sum::<f64>() / n,
            })
        })
        .collect()
}

fn instance_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &[trial as u64])
}

/// Channel realization of one trial.
pub fn trial_instance(cfg: &ExperimentConfig, trial: usize) -> Result<NetworkInstance> {
    generate_network(&cfg.scenario, instance_seed(cfg.seed, trial))
}

pub fn run_power_sweep(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let fbl = cfg.fbl.params(cfg.scenario.users)?;
    let instances: Vec<Result<NetworkInstance>> = (0..cfg.trials).into_par_iter().map(|t| trial_instance(cfg, t)).collect();

    let cells: Vec<(usize, usize, usize)> = (0..cfg.schemes.len())
        .flat_map(|s| (0..cfg.power_dbm.len()).flat_map(move |p| (0..cfg.trials).map(move |t| (s, p, t))))
        .collect();
    let rows: Vec<TrialRow> = cells
        .into_par_iter()
        .map(|(s, p, t)| {
            let scheme = &cfg.schemes[s];
            let power_dbm = cfg.power_dbm[p];
            let clock = Instant::now();
            let mut opts = cfg.ao.clone();
            opts.seed = instance_seed(cfg.seed, t);
            let (instance, outcome) = match &instances[t] {
                Ok(inst) => (inst.fingerprint(), optimize(inst, scheme, &fbl, dbm_to_watts(power_dbm), &opts)),
                Err(e) => (0, Err(e.clone())),
            };
            let wall_s = if cfg.record_wall_time { clock.elapsed().as_secs_f64() } else { 0.0 };
            match outcome {
                Ok(trace) => TrialRow {
                    scheme: scheme.label.clone(),
                    power_dbm,
                    trial: t,
                    rate_bits: trace.report.reported_bits(),
                    iters: trace.outer_iterations(),
                    wall_s,
                    instance,
                    error: None,
                },
                Err(e) => {
                    warn!("{} at {power_dbm} dBm, trial {t} failed: {e}", scheme.label);
                    TrialRow {
                        scheme: scheme.label.clone(),
                        power_dbm,
                        trial: t,
                        rate_bits: f64::NAN,
                        iters: 0,
                        wall_s,
                        instance,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let aggregates = aggregate(&rows);
    Ok(ResultsTable { rows, aggregates })
}

/// Six significant digits, shortest form.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".into()
    } else {
        format!("{rounded}")
    }
}

pub const CSV_HEADER: &str = "scheme,power_dBm,trial,maxmin_rate_bps_hz,iters,wall_s";
const AGGREGATE_TRIAL: &str = "mean";

fn check_label(label: &str) -> Result<()> {
    if label.contains([',', '"', '\n', '\r']) {
        return Err(Error::Config(format!("scheme label {label:?} cannot be written to CSV")));
    }
    Ok(())
}

impl ResultsTable {
    /// Trial rows followed by one `trial = mean` row per aggregate, holding
    /// the mean rate, mean iterations and mean wall time.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            check_label(&r.scheme)?;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scheme,
                fmt_float(r.power_dbm),
                r.trial,
                fmt_float(r.rate_bits),
                r.iters,
                fmt_float(r.wall_s)
            );
        }
        for a in &self.aggregates {
            check_label(&a.scheme)?;
            let _ = writeln!(
                out,
                "{},{},{AGGREGATE_TRIAL},{},{},{}",
                a.scheme,
                fmt_float(a.power_dbm),
                fmt_float(a.mean),
                fmt_float(a.mean_iters),
                fmt_float(a.mean_wall_s)
            );
        }
        Ok(out)
    }

    pub fn to_json_lines(&self) -> String {
        let num = |x: f64| serde_json::Value::from(fmt_float(x).parse::<f64>().ok());
        let mut out = String::new();
        for r in &self.rows {
            let v = serde_json::json!({
                "scheme": r.scheme,
                "power_dBm": num(r.power_dbm),
                "trial": r.trial,
                "maxmin_rate_bps_hz": num(r.rate_bits),
                "iters": r.iters,
                "wall_s": num(r.wall_s),
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        for a in &self.aggregates {
            let v = serde_json::json!({
                "scheme": a.scheme,
                "power_dBm": num(a.power_dbm),
                "trial": AGGREGATE_TRIAL,
                "maxmin_rate_bps_hz": num(a.mean),
                "iters": num(a.mean_iters),
                "wall_s": num(a.mean_wall_s),
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    /// Per-group counts, mean and standard error.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("scheme,power_dBm,n_ok,n_failed,mean,stderr\n");
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                a.scheme,
                fmt_float(a.power_dbm),
                a.n_ok,
                a.n_failed,
                fmt_float(a.mean),
                fmt_float(a.stderr)
            );
        }
        out
    }

    /// Parses the output of [`ResultsTable::to_csv`]. Aggregate rows come
    /// back with their mean values only; counts and standard errors live in
    /// the summary file.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config("missing or unexpected CSV header".into()));
        }
        let bad = |line: &str| Error::Config(format!("malformed CSV line {line:?}"));
        let float = |s: &str, line: &str| s.parse::<f64>().map_err(|_| bad(line));
        let mut table = ResultsTable::default();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let [scheme, power, trial, rate, iters, wall] = f.as_slice() else {
                return Err(bad(line));
            };
            if *trial == AGGREGATE_TRIAL {
                table.aggregates.push(AggregateRow {
                    scheme: scheme.to_string(),
                    power_dbm: float(power, line)?,
                    n_ok: 0,
                    n_failed: 0,
                    mean: float(rate, line)?,
                    stderr: 0.0,
                    mean_iters: float(iters, line)?,
                    mean_wall_s: float(wall, line)?,
                });
            } else {
                let rate_bits = float(rate, line)?;
                table.rows.push(TrialRow {
                    scheme: scheme.to_string(),
                    power_dbm: float(power, line)?,
                    trial: trial.parse().map_err(|_| bad(line))?,
                    rate_bits,
                    iters: iters.parse().map_err(|_| bad(line))?,
                    wall_s: float(wall, line)?,
                    instance: 0,
                    error: rate_bits.is_nan().then(|| "failed".to_string()),
                });
            }
        }
        Ok(table)
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Path of the summary file next to `out`: `results.csv` gives
/// `results.summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.summary.csv"))
}

/// Writes the table in the requested format and the summary file next to it.
pub fn emit(table: &ResultsTable, format: OutputFormat, out: &Path) -> Result<()> {
    let body = match format {
        OutputFormat::Csv => table.to_csv()?,
        OutputFormat::JsonLines => table.to_json_lines(),
    };
    write_atomic(out, &body)?;
    write_atomic(&summary_path(out), &table.summary_csv())
}
