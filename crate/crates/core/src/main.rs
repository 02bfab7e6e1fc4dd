//! Command-line entry point. Every subcommand reads the same JSON config;
//! errors go to stderr as a single `error: kind: message` line with exit
//! code 2 for config or parse problems and 1 for everything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amnn_core::error::Result;
use amnn_core::experiment::{
    cmd_cluster, cmd_evaluate, cmd_sweep, cmd_synth, cmd_train, parse_config, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "amnn", about = "Modular and noise-robust tabular classifiers", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset and write it as CSV.
    Synth(CommonArgs),
    /// Run density-peak clustering and dump the decision graph.
    Cluster(CommonArgs),
    /// Train the single configured algorithm on clean data and save the model.
    Train(CommonArgs),
    /// Evaluate a saved model on the configured dataset.
    Evaluate(CommonArgs),
    /// Run the full noise sweep and write report files.
    Sweep(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&load(&args)?),
        Command::Cluster(args) => cmd_cluster(&load(&args)?),
        Command::Train(args) => cmd_train(&load(&args)?, None),
        Command::Evaluate(args) => cmd_evaluate(&load(&args)?),
        Command::Sweep(args) => cmd_sweep(&load(&args)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
