//! Batch CLI for the cross-device EEG emotion-recognition pipeline.
//!
//! Stages chain through one output directory: `synth` writes the dataset,
//! `preprocess` and `featurize` refine it, `train`/`crossval`/`eval` consume
//! the features, `report` aggregates crossval outputs. Every stage embeds
//! the resolved-config hash in its artifacts and reruns byte-identically
//! for a fixed config and seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "decan", version, about = "Paired wet/dry EEG emotion-recognition pipeline")]
struct Cli {
    /// Configuration file (TOML, or JSON by extension). Defaults apply when
    /// omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set model.epochs=500 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory; stages write under <out>/<subcommand>/.
    #[arg(long, global = true, default_value = "decan_out")]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the paired synthetic dataset.
    Synth,
    /// Filter and resample a dataset to the working rate.
    Preprocess {
        /// Input dataset directory (default: <out>/synth/data).
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Extract differential-entropy features.
    Featurize {
        /// Input dataset directory (default: <out>/preprocess/data).
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Train one alignment model on all subjects.
    Train {
        /// Feature directory (default: <out>/featurize).
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Run cross-validation experiments.
    Crossval {
        /// Feature directory (default: <out>/featurize).
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Score a trained checkpoint on a feature set.
    Eval {
        /// Checkpoint path (default: <out>/train/model.ckpt).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Feature directory (default: <out>/featurize).
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Aggregate crossval reports into summary tables.
    Report {
        /// Crossval output directories (default: <out>/crossval).
        #[arg(long = "from")]
        from: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    let config = match RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };

    let result = match &cli.command {
        Command::Synth => commands::run_synth(&config, &cli.out),
        Command::Preprocess { input } => {
            commands::run_preprocess(&config, &cli.out, input.as_deref())
        }
        Command::Featurize { input } => {
            commands::run_featurize(&config, &cli.out, input.as_deref())
        }
        Command::Train { input } => commands::run_train(&config, &cli.out, input.as_deref()),
        Command::Crossval { input } => commands::run_crossval(&config, &cli.out, input.as_deref()),
        Command::Eval { model, input } => {
            commands::run_eval(&config, &cli.out, model.as_deref(), input.as_deref())
        }
        Command::Report { from } => commands::run_report(&config, &cli.out, from),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
