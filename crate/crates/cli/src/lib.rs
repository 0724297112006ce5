//! Command-line front end for the erase-then-repair pipeline: synthesize a
//! bundle, audit leakage, fit projectors, train the adapter, and report.

pub mod commands;
pub mod config;
pub mod exit;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Overrides, PipelineConfig};
pub use exit::{CliError, ExitCode};

use commands::Console;

#[derive(Debug, Parser)]
#[command(name = "ndebias", version, about = "Kernelized null-space debiasing for embeddings")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress console output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate a synthetic embedding bundle.
    Synth,
    /// Audit attribute leakage on the raw embeddings.
    Probe,
    /// Fit per-attribute projectors and the composite.
    Debias,
    /// Train the gated adapter on top of the fitted projectors.
    TrainAdapter,
    /// Consolidated leakage and utility table.
    Report,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        self.overrides.apply(&mut cfg)?;
        Ok(cfg)
    }
}

pub fn run_command(command: Command, cfg: &PipelineConfig, quiet: bool) -> Result<(), CliError> {
    let console = Console { quiet };
    match command {
        Command::Synth => commands::cmd_synth(cfg, console).map(|_| ()),
        Command::Probe => commands::cmd_probe(cfg, console).map(|_| ()),
        Command::Debias => commands::cmd_debias(cfg, console).map(|_| ()),
        Command::TrainAdapter => commands::cmd_train_adapter(cfg, console).map(|_| ()),
        Command::Report => commands::cmd_report(cfg, console).map(|_| ()),
    }
}

/// Parse-free entry point; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = cli
        .resolve_config()
        .and_then(|cfg| run_command(cli.command, &cfg, cli.quiet));
    match result {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            eprintln!("error: {e}");
            e.code() as i32
        }
    }
}
