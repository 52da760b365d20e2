//! `chromapred`: dataset preparation, training, checking and evaluation
//! for the attention-based chroma predictors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use chroma_core::{ChromaFormat, Variant};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "chromapred", version, about = "Neural chroma intra prediction toolkit")]
struct Cli {
    /// Seed for every random choice (block origins, initialization, shuffling).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Print per-file details and more frequent progress.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert PNG/PPM images to planar YUV files with JSON sidecars.
    Prepare(PrepareArgs),
    /// Sample blocks from prepared YUV files into a dataset.
    Extract(ExtractArgs),
    /// Train one variant and save its best-validation checkpoint.
    Train(TrainArgs),
    /// Finite-difference check of a variant's loss gradient.
    Gradcheck(GradcheckArgs),
    /// Score a checkpoint and the linear model on a dataset.
    Eval(EvalArgs),
    /// Predict one block of a YUV file.
    Predict(PredictArgs),
    /// Tabulate several evaluation reports side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Directory of source images.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value = "420")]
    format: ChromaFormat,
    /// Integer box-filter down-scaling factors; each yields one frame per image.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    scales: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    bit_depth: u8,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Directory of prepared `.yuv` files.
    #[arg(long, value_name = "DIR")]
    yuv: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    sizes: Vec<usize>,
    /// Blocks drawn for each size, spread evenly over the frames.
    #[arg(long)]
    per_size: usize,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    variant: Variant,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    val: Option<PathBuf>,
    /// Checkpoint path; the log goes to `<out>.log.ndjson` unless `--log` is given.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, default_value_t = 200_000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    val_interval: usize,
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Print a progress line every this many steps (0 = never).
    #[arg(long, default_value_t = 1000)]
    progress_every: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    variant: Variant,
    /// Number of random instances, starting at `--seed`.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Random coordinates checked per parameter tensor.
    #[arg(long, default_value_t = 24, conflicts_with = "exhaustive")]
    per_tensor: usize,
    /// Check every parameter coordinate.
    #[arg(long)]
    exhaustive: bool,
    /// Exit with failure when the error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// JSON report; per-block CSV is written alongside with a `.csv` extension.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long, value_name = "FILE")]
    yuv: PathBuf,
    /// Chroma-plane origin and side as `x,y,N`.
    #[arg(long, value_name = "X,Y,N", value_delimiter = ',', num_args = 1)]
    block: Vec<usize>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Evaluation reports; the first one is the reference.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// CSV table; a JSON copy is written alongside.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = commands::Context {
        seed: cli.seed,
        verbose: cli.verbose,
    };
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&ctx, a),
        Command::Extract(a) => commands::extract(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Gradcheck(a) => commands::gradcheck(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Compare(a) => commands::compare(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
