use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};
use smoothmil_cli::config::RunConfig;
use smoothmil_cli::run;

/// Train and analyze attention-based MIL models with a graph smoothness
/// prior on the attention logits.
#[derive(Parser)]
#[command(name = "smoothmil", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the config and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its manifest and summary card.
    GenSynth,
    /// Train one model per seed; write checkpoints, logs, and a report.
    Train,
    /// Train every variant x lambda cell and write the ranked ablation table.
    Ablate {
        /// Worker threads for independent grid cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score a saved checkpoint on every split of the configured data.
    Eval {
        /// Checkpoint to load.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write per-bag attention maps (CSV and PGM) for the test split.
    ExportMaps {
        /// Checkpoint to load.
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = RunConfig::load(&cli.config, cli.seed).and_then(|config| match &cli.command {
        Command::GenSynth => run::gen_synth(&config, cli.dry_run),
        Command::Train => run::train(&config, cli.dry_run),
        Command::Ablate { jobs } => run::ablate(&config, *jobs, cli.dry_run),
        Command::Eval { checkpoint } => run::eval(&config, checkpoint, cli.dry_run),
        Command::ExportMaps { checkpoint } => run::export_maps(&config, checkpoint, cli.dry_run),
    });
    if let Err(err) = outcome {
        eprintln!("error: {}", err);
        process::exit(run::exit_code(&err));
    }
}
