//! Thin command-line front end; all behavior lives in `seasoncast::cli`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seasoncast::baseline::BaselineKind;
use seasoncast::cli::{self, TrainArgs};

#[derive(Parser)]
#[command(
    name = "seasoncast",
    about = "Climate-aware multi-horizon demand forecasting harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a planted climate effect.
    Synth {
        /// Generator config (TOML); defaults to the bundled desk-scale setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for series.csv, ensembles.csv, truth.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a forecaster (or record a baseline) on a dataset directory.
    Train {
        /// Dataset directory holding series.csv and ensembles.csv.
        #[arg(long)]
        data: PathBuf,
        /// Model config (TOML); defaults to the synthetic-scale architecture.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training config (TOML): epochs, minibatch, learning rate, split.
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Output directory; artifacts land under <out>/<run_id>/.
        #[arg(long)]
        out: PathBuf,
        /// Drop all climate features (the ablation's climate-agnostic twin).
        #[arg(long)]
        no_climate: bool,
        /// Fit a non-learned baseline instead: seasonal-naive or persistence.
        #[arg(long, value_parser = BaselineKind::parse)]
        baseline: Option<BaselineKind>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Train a quantile head at these levels (e.g. 0.1,0.5,0.9).
        #[arg(long, value_delimiter = ',')]
        quantiles: Option<Vec<f64>>,
    },
    /// Evaluate a checkpoint on its test split and write report files.
    Evaluate {
        /// Path to a best.ckpt produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (must match what the checkpoint was trained on).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for report.txt, report.csv, scenarios.csv.
        #[arg(long)]
        out: PathBuf,
        /// Optional model config to cross-check against the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare two evaluations: error reduction of B over A plus win/tie/loss.
    Compare {
        /// Base run's report.csv (e.g. the no-climate model).
        #[arg(long)]
        report_a: PathBuf,
        /// Variant run's report.csv (e.g. the climate-aware model).
        #[arg(long)]
        report_b: PathBuf,
        /// Base run's scenarios.csv.
        #[arg(long)]
        scenarios_a: PathBuf,
        /// Variant run's scenarios.csv.
        #[arg(long)]
        scenarios_b: PathBuf,
        /// Output directory for comparison.{txt,csv} and verdicts.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    cli::configure_threads_from_env();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out, seed } => cli::cmd_synth(config.as_deref(), &out, seed),
        Command::Train {
            data,
            config,
            train_config,
            out,
            no_climate,
            baseline,
            seed,
            quantiles,
        } => cli::cmd_train(&TrainArgs {
            data_dir: data,
            model_config: config,
            train_config,
            out_dir: out,
            no_climate,
            baseline,
            seed,
            quantiles,
        })
        .map(|_| ()),
        Command::Evaluate { checkpoint, data, out, config } => {
            cli::cmd_evaluate(&checkpoint, &data, &out, config.as_deref()).map(|_| ())
        }
        Command::Compare { report_a, report_b, scenarios_a, scenarios_b, out } => {
            cli::cmd_compare(&report_a, &report_b, &scenarios_a, &scenarios_b, &out).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
