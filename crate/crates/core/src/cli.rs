//! Command-line front end of the power sweep.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when the
//! sweep itself or writing its output fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::Parser;

use crate::ao::SchemeSpec;
use crate::error::Result;
use crate::experiment::{emit, parse_power_range, run_power_sweep, summary_path, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Max-min rate power sweep for STAR-RIS assisted rate splitting.
#[derive(Debug, Parser)]
#[command(name = "star-rsma", version)]
pub struct Args {
    /// Experiment config file (TOML).
    #[arg(long, value_name = "PATH", required_unless_present = "print_defaults")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo trials per scheme and power.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Power grid in dBm as start:step:stop, or one value.
    #[arg(long, value_name = "RANGE")]
    pub power: Option<String>,
    /// Comma-separated scheme labels.
    #[arg(long, value_name = "LIST")]
    pub schemes: Option<String>,
    /// Output file.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Maximum outer iterations.
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Outer stopping tolerance in bits/s/Hz.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Print the full default config and exit.
    #[arg(long)]
    pub print_defaults: bool,
}

impl Args {
    /// Loads the config file and applies the flag overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(power) = &self.power {
            cfg.power_dbm = parse_power_range(power)?;
        }
        if let Some(list) = &self.schemes {
            cfg.schemes = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse::<SchemeSpec>).collect::<Result<_>>()?;
        }
        if let Some(out) = &self.out {
            cfg.output.clone_from(out);
        }
        if let Some(n) = self.max_outer {
            cfg.ao.max_outer = n;
        }
        if let Some(tol) = self.tol {
            cfg.ao.tol_bits = tol;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if args.print_defaults {
        print!("{}", ExperimentConfig::default().to_toml());
        return EXIT_OK;
    }
    let cfg = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let table = match run_power_sweep(&cfg) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = emit(&table, cfg.format, &cfg.output) {
        eprintln!("error: {e}");
        return EXIT_RUNTIME;
    }

    let failed = table.rows.iter().filter(|r| r.failed()).count();
    let mut out = std::io::stdout().lock();
    for a in &table.aggregates {
        let _ = writeln!(out, "{:<16} {:>6} dBm  {:>9.4} ± {:.4} bits/s/Hz", a.scheme, a.power_dbm, a.mean, a.stderr);
    }
    let _ = writeln!(
        out,
        "wrote {} rows to {} ({failed} failed), summary in {}",
        table.rows.len(),
        cfg.output.display(),
        summary_path(&cfg.output).display()
    );
    EXIT_OK
}
