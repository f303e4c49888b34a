//! Command-line driver: one subcommand per study, a TOML configuration with
//! command-line overrides, a JSON report and CSV tables per run.
//!
//! Exit codes: 0 when every declared tolerance is met, 1 when one is not (or
//! the study breaks down numerically), 2 on configuration errors.

pub mod config;
pub mod experiments;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use clap::Parser;
use pamshift::Error;

use config::{ConfigError, ExperimentConfig, Overrides};
use experiments::{run_experiment, SUBCOMMANDS};
use report::{RunReport, Software};

pub const EXIT_OK: i32 = 0;
pub const EXIT_TOLERANCE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pamshift", version, about = "Experiments for the shifted parabolic Anderson model")]
pub struct Cli {
    #[arg(value_parser = SUBCOMMANDS)]
    pub subcommand: String,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any key, e.g. --set solver.paths=2000 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Spatial derivatives in the Hurst budget.
    #[arg(long)]
    pub n: Option<u32>,
    /// Potential: zero, constant, cos1, white-noise.
    #[arg(long = "V")]
    pub potential: Option<String>,
    /// Initial condition: cos1, one, one-plus-cos1.
    #[arg(long)]
    pub f: Option<String>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (wins over PAMSHIFT_OUT).
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            set: self.set.clone(),
            eta: self.eta,
            d: self.d,
            n: self.n,
            potential: self.potential.clone(),
            f: self.f.clone(),
            t: self.t,
            paths: self.paths,
            threads: self.threads,
            out: self.out.clone(),
            seed: self.seed,
        }
    }
}

/// Parse arguments, run the study and write its outputs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match ExperimentConfig::load(cli.config.as_deref(), std::env::var("PAMSHIFT_OUT").ok(), &cli.overrides()) {
        Ok(c) => c,
        Err(ConfigError(msg)) => {
            eprintln!("configuration error: {msg}");
            return EXIT_CONFIG;
        }
    };
    if cfg.experiment.threads > 0 {
        // Fails only if the pool already exists (library callers).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.experiment.threads).build_global();
    }
    execute(&cli.subcommand, &cfg)
}

fn execute(subcommand: &str, cfg: &ExperimentConfig) -> i32 {
    let start = SystemTime::now();
    let clock = Instant::now();
    let crit = experiments::criterion(subcommand).unwrap_or("none");
    let outcome = match run_experiment(subcommand, cfg) {
        Ok(o) => o,
        Err(e @ (Error::Parameter(_) | Error::Shape(_) | Error::Unsupported(_))) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("criterion {crit} failed: {e}");
            return EXIT_TOLERANCE;
        }
    };
    let pass = outcome.verdicts.iter().all(|v| v.pass);
    let report = RunReport {
        schema_version: report::SCHEMA_VERSION,
        timestamp: report::timestamp(start, clock.elapsed()),
        software: Software {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        subcommand: subcommand.into(),
        criterion: outcome.criterion.into(),
        config: cfg.to_json(),
        seeds: outcome.seeds,
        results: outcome.results,
        verdicts: outcome.verdicts,
        pass,
    };
    if let Err(e) = write_outputs(Path::new(&cfg.experiment.out), subcommand, &report, &outcome.tables) {
        eprintln!("cannot write outputs to {}: {e}", cfg.experiment.out);
        return EXIT_TOLERANCE;
    }
    for line in &outcome.stdout {
        println!("{line}");
    }
    for v in &report.verdicts {
        eprintln!(
            "{} {}: {} {} {}",
            if v.pass { "pass" } else { "FAIL" },
            v.name,
            report::num(v.value),
            v.relation,
            report::num(v.threshold)
        );
    }
    let failing = report.failing();
    if failing.is_empty() {
        EXIT_OK
    } else {
        let names: Vec<&str> = failing.iter().map(|v| v.name.as_str()).collect();
        eprintln!("criterion {} failed: {}", report.criterion, names.join(", "));
        EXIT_TOLERANCE
    }
}

fn write_outputs(dir: &Path, prefix: &str, report: &RunReport, tables: &[report::Table]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in tables {
        t.write(dir, prefix)?;
    }
    report.write(dir)?;
    Ok(())
}
