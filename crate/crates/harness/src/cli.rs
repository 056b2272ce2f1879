//! The `pooling` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::load::load_run;
use crate::report::report;
use crate::run::{load_config, run_experiment, verify_manifest, RunManifest, Stages};

#[derive(Debug, Parser)]
#[command(
    name = "pooling",
    version,
    about = "Measure adaptive partial pooling in a tiny transformer against hierarchical and closed-form regression",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config: "default", a TOML file, or a previous run's manifest.json
    #[arg(long, global = true, default_value = "default", value_name = "FILE")]
    pub config: String,
    /// Master seed; every replication seed is derived from it
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output (run) directory; overrides the config and POOLING_OUTPUT_DIR
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replications per condition
    #[arg(long, global = true, value_name = "N")]
    pub replications: Option<u32>,
    /// Restrict to one condition, by name or 0-based index
    #[arg(long, global = true, value_name = "NAME|INDEX")]
    pub condition: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate corpora only
    Generate,
    /// Generate corpora and closed-form shrinkage estimates
    Shrink,
    /// Generate corpora and fit the hierarchical logistic regression
    FitHier,
    /// Generate corpora and train the transformer with per-epoch probes
    TrainLm,
    /// Full pipeline: every estimator, then the report
    Run,
    /// Write the analysis tables for an existing run into <RUN_DIR>/analysis
    Analyze {
        /// Run directory (defaults to --out, then the config's output_dir)
        run_dir: Option<PathBuf>,
    },
    /// Write tables, figures and index.html for an existing run into <RUN_DIR>/report
    Report {
        /// Run directory (defaults to --out, then the config's output_dir)
        run_dir: Option<PathBuf>,
    },
    /// Print the effective config (after flags and environment) as TOML
    Config,
    /// Re-hash every file listed in a run's manifest
    Verify {
        /// Run directory (defaults to --out, then the config's output_dir)
        run_dir: Option<PathBuf>,
    },
}

fn config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&g.config)?;
    cfg.apply_env()?;
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    if let Some(r) = g.replications {
        cfg.replications = r;
        for c in &mut cfg.conditions {
            c.replications = None;
        }
    }
    if let Some(c) = &g.condition {
        cfg.select_condition(c)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(g: &GlobalArgs, explicit: &Option<PathBuf>) -> Result<PathBuf> {
    match explicit {
        Some(d) => Ok(d.clone()),
        None => Ok(config(g)?.output_dir),
    }
}

fn summarize(m: &RunManifest, dir: &Path, started: Instant) {
    let failed = m.failures().count();
    eprintln!(
        "{} replications ({} failed), {} files in {} [{:.1} s]",
        m.replications.len(),
        failed,
        m.files.len(),
        dir.display(),
        started.elapsed().as_secs_f64()
    );
    for f in m.failures() {
        eprintln!("  failed {}/{}: {}", f.condition, f.replication, f.error.as_deref().unwrap_or(""));
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let started = Instant::now();
    let stages = match cli.command {
        Command::Generate => Some(Stages::CORPUS_ONLY),
        Command::Shrink => Some(Stages { shrink: true, hier: false, lm: false }),
        Command::FitHier => Some(Stages { shrink: false, hier: true, lm: false }),
        Command::TrainLm => Some(Stages { shrink: false, hier: false, lm: true }),
        Command::Run => Some(Stages::ALL),
        _ => None,
    };
    if let Some(stages) = stages {
        let cfg = config(&cli.global)?;
        let m = run_experiment(&cfg, stages)?;
        summarize(&m, &cfg.output_dir, started);
        if matches!(cli.command, Command::Run) {
            let r = report(&cfg.output_dir, None)?;
            eprintln!("report: {}", r.dir.join(crate::report::INDEX_HTML).display());
            for g in &r.gaps {
                eprintln!("  gap: {g}");
            }
        }
        return Ok(if m.failures().next().is_some() { 3 } else { 0 });
    }
    match &cli.command {
        Command::Config => {
            print!("{}", config(&cli.global)?.to_toml());
            Ok(0)
        }
        Command::Analyze { run_dir: d } => {
            let dir = run_dir(&cli.global, d)?;
            let data = load_run(&dir)?;
            let a = crate::analyze::analyze(&data)?;
            let written = crate::analyze::write_analysis(&a, &dir.join("analysis"))?;
            eprintln!("{} analysis files in {}", written.len(), dir.join("analysis").display());
            Ok(0)
        }
        Command::Report { run_dir: d } => {
            let dir = run_dir(&cli.global, d)?;
            let r = report(&dir, None)?;
            eprintln!("{} figures; report: {}", r.figures.len(), r.dir.join(crate::report::INDEX_HTML).display());
            for g in &r.gaps {
                eprintln!("  gap: {g}");
            }
            Ok(0)
        }
        Command::Verify { run_dir: d } => {
            let dir = run_dir(&cli.global, d)?;
            let bad = verify_manifest(&dir)?;
            if bad.is_empty() {
                eprintln!("all hashes match");
                Ok(0)
            } else {
                for b in &bad {
                    eprintln!("mismatch: {b}");
                }
                Err(Error::Manifest(format!("{} files do not match their hashes", bad.len())))
            }
        }
        _ => unreachable!("pipeline commands handled above"),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status: 0 on success, 1 on error, 2 on a usage error, 3 when
/// some replications failed.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
