use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use siamgtr::evaluation::ACTIVITYNET_THRESHOLDS;
use siamgtr::trainer::Mode;

mod commands;
mod config;
mod data;
mod error;
mod manifest;

use config::{RunConfig, PROFILES};
use data::resolve_data_dir;
use error::CliError;

#[derive(Parser)]
#[command(name = "siamgtr", version, about = "Weakly-supervised video paragraph grounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted alignments.
    SynthGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes a checkpoint, a JSON-lines log and a manifest.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.mode`.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint, or a predictions file, against ground truth.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, required_unless_present = "predictions")]
        ckpt: Option<PathBuf>,
        /// Evaluate a file written by `predict` instead of running a model.
        #[arg(long, conflicts_with = "ckpt")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-sentence IoUs as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Comma-separated IoU thresholds; defaults to the config's, else 0.3,0.5,0.7.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Reject checkpoints trained with a different configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write per-video interval predictions as JSON.
    Predict {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Debugging dumps.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
    /// Print a built-in configuration profile.
    Config {
        #[arg(long, default_value = "synthetic")]
        profile: String,
    },
}

#[derive(Subcommand)]
enum Inspect {
    /// One pseudo-video composition as JSON.
    Compose {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// Foreground video index within the split.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer anchors and attention centroids of one video as CSV.
    Decode {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to the first video of the split.
        #[arg(long)]
        video: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthGen { config, out, seed } => commands::synth_gen(&RunConfig::load(&config)?, &out, seed),
        Command::Train { data, config, mode, out, resume, epochs } => {
            let cfg = RunConfig::load(&config)?;
            let data = resolve_data_dir(data.as_deref())?;
            commands::train(
                &cfg,
                commands::TrainArgs { data: &data, mode, out: &out, resume: resume.as_deref(), epochs },
            )
        }
        Command::Eval { data, split, ckpt, predictions, out, csv, thresholds, config } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let thresholds = thresholds
                .or_else(|| cfg.as_ref().map(|c| c.eval.thresholds.clone()))
                .unwrap_or_else(|| ACTIVITYNET_THRESHOLDS.to_vec());
            let data = resolve_data_dir(data.as_deref())?;
            let report = commands::eval(commands::EvalArgs {
                data: &data,
                split: &split,
                ckpt: ckpt.as_deref(),
                predictions: predictions.as_deref(),
                out: &out,
                csv: csv.as_deref(),
                thresholds,
                config: cfg.as_ref(),
            })?;
            let recalls: Vec<String> = report.recall.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
            println!("mIoU {:.4}  {}  ({} sentences)", report.miou, recalls.join("  "), report.num_sentences);
            Ok(())
        }
        Command::Predict { data, split, ckpt, out, config } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let data = resolve_data_dir(data.as_deref())?;
            commands::predict(&data, &split, &ckpt, &out, cfg.as_ref())
        }
        Command::Inspect { what: Inspect::Compose { data, config, split, index, seed, out } } => {
            let cfg = RunConfig::load(&config)?;
            let data = resolve_data_dir(data.as_deref())?;
            commands::inspect_compose(&cfg, &data, &split, index, seed, &out)
        }
        Command::Inspect { what: Inspect::Decode { data, split, ckpt, video, out } } => {
            let data = resolve_data_dir(data.as_deref())?;
            commands::inspect_decode(&data, &split, &ckpt, video.as_deref(), &out)
        }
        Command::Config { profile } => {
            let text = RunConfig::profile(&profile).ok_or_else(|| {
                let names: Vec<&str> = PROFILES.iter().map(|(n, _)| *n).collect();
                CliError::Usage(format!("unknown profile `{profile}`; available: {}", names.join(", ")))
            })?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
