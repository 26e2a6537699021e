//! Command-line experiment runner for deterministic equivalents.
//!
//! Each subcommand reads a TOML configuration, computes everything in memory and only then
//! writes its CSV outputs, each through a temporary file and a rename.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod lab;
pub mod mixture;
pub mod output;

pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "deteq", version, about = "Deterministic equivalents of sample covariance resolvents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// delta', Stieltjes transform and density predictions.
    Predict,
    /// Spectrum and histogram of one seeded draw.
    Simulate,
    /// Simulated against predicted Stieltjes transforms and histograms.
    Compare,
    /// Concentration checks.
    Conclab,
    /// Class statistics from sample files.
    Ingest,
}

/// Diagnostics gathered while a command runs. A failure marks a gate or a solve that did
/// not converge; outputs are still written.
#[derive(Debug, Default, Clone)]
pub struct Report {
    pub notes: Vec<String>,
    pub failures: Vec<String>,
}

impl Report {
    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn fail(&mut self, s: impl Into<String>) {
        self.failures.push(s.into());
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub report: Report,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let path = cli.config.as_ref().context("--config is required")?;
    let cfg = ExperimentConfig::load(path)?;
    let mut report = Report::default();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("cannot start worker threads")?;
    let files = pool.install(|| match cli.command {
        Command::Predict => commands::predict(&cfg, cli.seed, &mut report),
        Command::Simulate => commands::simulate(&cfg, cli.seed, &mut report),
        Command::Compare => commands::compare(&cfg, cli.seed, &mut report),
        Command::Conclab => lab::conclab(&cfg, cli.seed, &mut report),
        Command::Ingest => commands::ingest(&cfg, &mut report),
    })?;
    let written = output::write_all(&cli.out, &files)?;
    Ok(Outcome { written, report })
}
