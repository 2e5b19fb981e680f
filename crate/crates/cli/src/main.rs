//! Command-line simulator for federated group DRO experiments.

mod commands;
mod config_file;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fgdro",
    about = "Simulate communication-efficient federated group DRO algorithms on synthetic heterogeneous clients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one federated run and write metrics.csv, summary.json and
    /// checkpoint.json into the output directory.
    Run(RunArgs),
    /// Run the cross product of a hyperparameter grid, one subdirectory
    /// per cell, plus an index.csv of final metrics.
    Sweep(SweepArgs),
    /// Run the deterministic oracle/property battery and report pass/fail
    /// per check.
    Validate,
    /// Split a label vector across clients with a Dirichlet draw per class
    /// and report the imbalance.
    Partition(PartitionArgs),
    /// Compare finished runs: one table row per run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config: RunConfig fields at the top level, optional [data]
    /// table for the client population.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override a RunConfig field, e.g. --set eta=0.01 (flag > file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Step-size schedule; "paper" sets eta and beta1 from R and I with
    /// unit constants.
    #[arg(long)]
    schedule: Option<String>,
    /// Fan client loops out to a worker pool (results are identical to
    /// the sequential reference mode).
    #[arg(long)]
    parallel: bool,
    /// Record the averaged iterate every STRIDE-th local step.
    #[arg(long, value_name = "STRIDE")]
    iterate_log: Option<usize>,
    /// Measure per-round wall time into the wall_ms column. Off by
    /// default so output files are byte-stable.
    #[arg(long)]
    timing: bool,
    /// Proximal-diagnostic curvature for the CVaR stationarity column.
    #[arg(long, default_value_t = 2.0)]
    rho_hat: f64,
    /// Inner subgradient steps of the proximal diagnostic.
    #[arg(long, default_value_t = 400)]
    inner_steps: u32,
    /// Inner step-size constant c (step c/sqrt(t)); default 0.5/(1+rho).
    #[arg(long)]
    inner_step_size: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Grid axis, e.g. --vary local_steps=1,8,32 (repeatable; keys:
    /// rounds, local_steps, lambda, cvar_k, eta).
    #[arg(long = "vary", value_name = "KEY=V1,V2,...")]
    vary: Vec<String>,
    /// Fixed total local-step budget: per cell, rounds = budget / local_steps.
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Args)]
struct PartitionArgs {
    /// Dirichlet concentration (small = skewed, large = uniform).
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    clients: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One integer class label per line.
    #[arg(long)]
    labels_csv: Option<PathBuf>,
    /// Synthetic label vector: --samples spread evenly over --classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Write the full assignment as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories (each must contain metrics.csv).
    dirs: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => commands::cmd_run(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Validate => commands::cmd_validate(),
        Command::Partition(args) => commands::cmd_partition(args),
        Command::Report(args) => commands::cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
