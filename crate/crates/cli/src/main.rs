//! `bdsde-filter`: runs simulations, grid solvers, oracles and comparisons
//! from a configuration file.
//!
//! Exit codes: 0 success, 1 configuration, 2 numerical failure, 3 I/O,
//! 4 acceptance gate failure. `BDSDE_FILTER_THREADS` caps the worker count.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bdsde_filter_cli::commands::{self, Command};
use bdsde_filter_cli::config::{ExperimentConfig, Overrides};
use bdsde_filter_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "bdsde-filter",
    version,
    about = "Grid filters and their oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated time indices to write as slices.
    #[arg(long, global = true, value_delimiter = ',')]
    slices: Option<Vec<usize>>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Simulate signal and observation paths.
    Simulate,
    /// Solve the backward equation for the terminal test function.
    Fk,
    /// Run the forward filter.
    Filter,
    /// Run the Kalman-Bucy and particle oracles.
    Oracle,
    /// Trace the pairing of the backward and forward solutions.
    Adjoint,
    /// Run everything enabled and check the acceptance gates.
    Compare,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Fk => Command::Fk,
            Cmd::Filter => Command::Filter,
            Cmd::Oracle => Command::Oracle,
            Cmd::Adjoint => Command::Adjoint,
            Cmd::Compare => Command::Compare,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("BDSDE_FILTER_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "BDSDE_FILTER_THREADS must be a positive integer, got '{value}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(&path)?;
    config.apply(&Overrides {
        seed: cli.seed,
        out: cli.out,
        slices: cli.slices,
    });
    let exp = config.resolve()?;
    let report = commands::run(cli.command.into(), &exp)?;
    if let Some(report) = report {
        for g in &report.gates {
            println!(
                "[{}] {}: {}",
                if g.passed { "PASS" } else { "FAIL" },
                g.name,
                g.detail
            );
        }
        let failed: Vec<String> = report
            .gates
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.name.to_string())
            .collect();
        if !failed.is_empty() {
            return Err(CliError::Gate(failed));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bdsde-filter: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
