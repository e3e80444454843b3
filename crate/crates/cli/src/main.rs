//! `mmvae`: synthetic data, training, evaluation and streaming inference.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
//! failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmvae::Error;

#[derive(Parser)]
#[command(name = "mmvae", version, about = "Audio and gaze driven facial coefficients")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic capture sessions (WAV + CSV) and a manifest.
    Datagen(DatagenArgs),
    /// Run the audio and gaze frontends over a session directory.
    Featurize(FeaturizeArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint or a run manifest on held-out sessions.
    Eval(EvalArgs),
    /// Offline face coefficients for one clip.
    Infer(InferArgs),
    /// Frame-by-frame causal inference with latency statistics.
    Stream(StreamArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train a grid of variants and seeds and emit the ablation table.
    Ablate(AblateArgs),
}

/// Settings shared by every command that reads a `key=value` file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `key=value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting, applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct DatagenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    subject: Option<u8>,
    /// mixed, conversational or descriptive.
    #[arg(long)]
    train_set: Option<String>,
    /// Training sessions per style (doubled for single-style sets).
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    session_seconds: Option<f64>,
    #[arg(long)]
    heldout_sessions: Option<usize>,
    #[arg(long)]
    heldout_seconds: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Session directory written by `datagen`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `<name>.features.csv` files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Session directories with training data (split `train`).
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Session directories with held-out data (split `heldout`).
    #[arg(long)]
    heldout: Vec<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Write the metrics log here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long, conflicts_with = "runs")]
    checkpoint: Option<PathBuf>,
    /// Run manifest (`label checkpoint split` lines).
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Session directory; its held-out sessions form the evaluation splits.
    #[arg(long)]
    data: PathBuf,
    /// Write the table as TSV.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Write an audio mixture-weight heatmap CSV for the first held-out clip.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    heatmap_start: usize,
    #[arg(long, default_value_t = 100)]
    heatmap_frames: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    /// Per frame: little-endian u32 count, then that many f32 values.
    Bin,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Session stem (`dir/name`, reads `name.wav` and `name.gaze.csv`) or a
    /// `.features.csv` file.
    #[arg(long)]
    input: PathBuf,
    /// Output file; `-` for standard output.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    io: InputArgs,
}

#[derive(Args)]
struct StreamArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Pace input at the 100 Hz frame clock.
    #[arg(long)]
    realtime: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    configs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct AblateArgs {
    /// Output directory for checkpoints, the run manifest and tables.
    #[arg(long)]
    out: PathBuf,
    /// Comma separated variant tags.
    #[arg(long)]
    variants: Option<String>,
    /// Comma separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Numerical { .. } | Error::InternalConsistency(_) | Error::State(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Datagen(a) => commands::datagen(a),
        Command::Featurize(a) => commands::featurize(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Stream(a) => commands::stream(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
