use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "streamdepth", version, about = "Streaming video depth toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic sequences with exact depth.
    Gen(GenArgs),
    /// Fine-tune the head on generated sequences.
    Train(TrainArgs),
    /// Frame-by-frame inference with latent caches.
    Stream(InferArgs),
    /// Batch inference over whole sequences (equivalence oracle for `stream`).
    #[command(name = "infer-batch", hide = true)]
    InferBatch(InferArgs),
    /// AbsRel and delta1 of predictions against ground truth.
    Eval(EvalArgs),
    /// Per-frame scale drift relative to frame 0.
    Drift(DriftArgs),
    /// Latency and cache-memory report.
    Bench(BenchArgs),
    /// Run the verification suite.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Fp16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Align {
    First,
    Global500,
    Globalall,
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 1)]
    pub sequences: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    /// Scene description (JSON); random scenes are drawn when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// A sequence directory or a directory of sequence directories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = streamdepth::train::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Fixed frame stride; sampled from 1..=4 per clip when absent.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub stride: Option<u8>,
    #[arg(long)]
    pub augment: bool,
    #[arg(long, default_value_t = 16)]
    pub context: usize,
    #[arg(long, default_value_t = 8)]
    pub clip_frames: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub no_cosine: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from a checkpoint; its step counter carries over.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the checkpoint's context length.
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub caches: usize,
    #[arg(long, value_enum, default_value_t = Precision::Fp32)]
    pub precision: Precision,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub stride: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Directory of predicted inverse-depth PFMs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth sequence directory or manifest.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = Align::First)]
    pub align: Align,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub stride: u8,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct DriftArgs {
    /// Prediction directories, paired in order with `--gt`.
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    /// Moving-average window; 1 disables smoothing.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub smooth: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub stride: u8,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    /// Context lengths to measure.
    #[arg(long, num_args = 1.., default_values_t = [8usize, 16, 32])]
    pub context: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub caches: usize,
    #[arg(long, value_enum, default_value_t = Precision::Fp32)]
    pub precision: Precision,
    /// Frames measured after warm-up.
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long)]
    pub skip_batch_recompute: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct CheckArgs {
    /// Widen the batch attention band by one frame; the equivalence check
    /// must catch it.
    #[arg(long)]
    pub mutate_band: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_CHECK_FAILED: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Stream(a) => commands::infer(&a, true),
        Command::InferBatch(a) => commands::infer(&a, false),
        Command::Eval(a) => commands::eval(&a),
        Command::Drift(a) => commands::drift(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Check(a) => commands::check(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
