//! `ssmp` — semi-supervised single-view point-cloud reconstruction.
//!
//! Subcommands cover the full pipeline: synthetic data generation, shape
//! prior fusion, the two training stages, evaluation, and the paired-seed
//! ablation runner. Every run writes a manifest recording the config, the
//! seeds, and content hashes of its inputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ssmp", version, about = "Semi-supervised single-view 3D point-cloud reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of parametric shapes with rendered views.
    GenData {
        /// Flat key-value data config (see `docs/FORMATS.md`).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build fused initial clouds from labeled training data.
    FusePriors {
        /// Dataset directory (written by gen-data).
        #[arg(long)]
        dataset: PathBuf,
        /// Category id, or `all`.
        #[arg(long, default_value = "all")]
        category: String,
        /// Number of prototypes per category.
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Fusion strategy: inverse, direct, or penalty.
        #[arg(long, default_value = "inverse")]
        strategy: String,
        /// Labeled fraction used to select the prior-building clouds.
        #[arg(long, default_value_t = 0.1)]
        labeled_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (one cloud + manifest per category).
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised warm-up of the teacher model.
    TrainWarmup {
        /// Flat key-value pipeline config.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Directory of fused priors (defaults to rebuilding in process).
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Overrides `train.seed` and `data.split_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-guided semi-supervised stage.
    TrainSsl {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Warm-up teacher checkpoint.
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the dataset's test split.
    Eval {
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        /// Label for the report's `model` field.
        #[arg(long, default_value = "model")]
        tag: String,
        /// Optional path for the machine-readable report (JSON line).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a paired-seed ablation plan end to end.
    Ablate {
        /// Plan: ssl-vs-warmup, fusion-strategy, prior-single-vs-multi,
        /// decoder-type, or label-ratio.
        #[arg(long)]
        plan: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated seed list, e.g. `1,2,3`.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out } => commands::gen_data(&config, &out),
        Command::FusePriors {
            dataset,
            category,
            k,
            strategy,
            labeled_ratio,
            seed,
            out,
        } => commands::fuse_priors(&dataset, &category, k, &strategy, labeled_ratio, seed, &out),
        Command::TrainWarmup {
            config,
            data,
            priors,
            seed,
            out,
        } => commands::train_warmup(&config, &data, priors.as_deref(), seed, &out),
        Command::TrainSsl {
            config,
            data,
            priors,
            teacher,
            seed,
            out,
        } => commands::train_ssl(&config, &data, priors.as_deref(), &teacher, seed, &out),
        Command::Eval {
            model,
            data,
            priors,
            tag,
            out,
        } => commands::eval(&model, &data, &priors, &tag, out.as_deref()),
        Command::Ablate {
            plan,
            config,
            data,
            seeds,
            out,
        } => commands::ablate(&plan, &config, &data, &seeds, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
