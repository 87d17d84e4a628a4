//! Batch front door for the disease-mapping engine: simulate datasets, fit a
//! single hierarchy, compare all orderings, and summarize a finished run.

mod config;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdagar::Error;

#[derive(Parser)]
#[command(name = "mdagar", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate replicate datasets from a simulation truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Fit one hierarchy ordering by Metropolis-within-Gibbs.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// 1-based hierarchy order, e.g. `2,1`.
        #[arg(long)]
        order: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Worker threads across chains.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fit every disease ordering and weight them by marginal likelihood.
    CompareOrders {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Worker threads across orderings.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a human-readable summary of a finished run directory.
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate {
            config,
            seed,
            out_dir,
        } => run::cmd_simulate(config, *seed, out_dir),
        Cmd::Fit {
            data,
            adjacency,
            config,
            order,
            seed,
            out_dir,
            jobs,
        } => run::cmd_fit(
            data,
            adjacency,
            config.as_deref(),
            order.as_deref(),
            *seed,
            out_dir,
            *jobs,
        ),
        Cmd::CompareOrders {
            data,
            adjacency,
            config,
            seed,
            out_dir,
            jobs,
        } => run::cmd_compare_orders(data, adjacency, config.as_deref(), *seed, out_dir, *jobs),
        Cmd::Report { out_dir } => run::cmd_report(out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
