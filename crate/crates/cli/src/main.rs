//! `segan`: synthetic data, training, enhancement, baselines and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "segan", version, about = "Raw-waveform adversarial speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file and free-form overrides accepted by every subcommand.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// key=value config file (`#` comments, dotted keys such as train.lr).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Generator topology flags.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// Model size: paper (window 16384, 11 stages) or reduced (window 1024, 4 stages).
    #[arg(long, value_parser = ["paper", "reduced"])]
    pub preset: Option<String>,
    /// Samples per model window.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic corpus: clean, noise and noisy WAVs plus a manifest.
    SynthData(SynthDataArgs),
    /// Train generator and discriminator, writing checkpoints and a loss log.
    Train(TrainArgs),
    /// Enhance a WAV file with a trained generator.
    Enhance(EnhanceArgs),
    /// Enhance a WAV file with the Wiener baseline.
    EnhanceWiener(WienerArgs),
    /// Compare enhanced audio against clean references.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Print the generator's per-layer shapes.
    Shapes(ShapesArgs),
    /// Aggregate listening-test ratings into MOS and CMOS.
    Mos(MosArgs),
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub utterances: Option<usize>,
    /// Seconds per utterance.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory for checkpoints, loss.csv and config.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus manifest; the synthetic corpus is used when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Examples per forward pass; gradients are accumulated up to --batch-size.
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Train adversarially (true) or on the L1 term alone (false).
    #[arg(long)]
    pub adversarial: Option<bool>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Print every n-th step's losses.
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Seed of the latent input.
    #[arg(long, default_value_t = 0, conflicts_with = "z_zero")]
    pub z_seed: u64,
    /// Use an all-zero latent input.
    #[arg(long)]
    pub z_zero: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Defaults to config.txt next to the checkpoint, when present.
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct WienerArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Decision-directed smoothing constant.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Leading frames used to estimate the noise.
    #[arg(long)]
    pub noise_frames: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub gain_floor_db: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricChoice {
    Ssnr,
    Llr,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Clean WAV, or a directory of them.
    #[arg(long)]
    pub clean: PathBuf,
    /// Test WAV, or a directory with the same file names.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricChoice::Ssnr)]
    pub metric: MetricChoice,
    /// Also write the file,metric,value report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long, default_value_t = segan::tensor::gradcheck::DEFAULT_EPS)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct MosArgs {
    /// CSV of listener,sentence,system,score.
    #[arg(long)]
    pub ratings: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Train(a) => commands::train(a),
        Command::Enhance(a) => commands::enhance(a),
        Command::EnhanceWiener(a) => commands::enhance_wiener(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Shapes(a) => commands::shapes(a),
        Command::Mos(a) => commands::mos(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
