//! `textgan`: command-line driver for pretraining, fine-tuning, adversarial
//! training, sampling and evaluation.
//!
//! Exit status is 0 on success, 2 for usage and configuration errors
//! (unknown flags, missing files, invalid settings) and 1 for failures during
//! a run. Errors are reported on stderr as a single JSON line.

mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "textgan", version, about = "Recurrent language-model GANs for creative text")]
struct Cli {
    /// Parent of the run directories created when `--out-dir` is not given.
    #[arg(long, global = true, env = "TEXTGAN_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a corpus into train, validation and test files.
    Split(SplitArgs),
    /// Build a vocabulary and train a language model from scratch.
    Pretrain(PretrainArgs),
    /// Continue maximum-likelihood training of a checkpoint on new data.
    Finetune(FinetuneArgs),
    /// Adversarial fine-tuning; resumes when given an unfinished gan checkpoint.
    GanTrain(GanArgs),
    /// Sample text from a checkpoint.
    Generate(GenerateArgs),
    /// Compare checkpoints on a test file.
    Eval(EvalArgs),
}

/// Corpus files: plain text with documents separated by blank lines.
#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
}

/// Settings applied on top of the base configuration, in this order:
/// `--config`, `--preset`, the individual flags, then `--set`.
#[derive(Debug, Args)]
struct Overrides {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset; may be repeated.
    #[arg(long)]
    preset: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; a fresh one under the output root by default.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// A `pretrained` or `finetuned` checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GanArgs {
    /// A `pretrained`, `finetuned` or `gan` checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long, value_parser = ["creative_gan", "gumbel_gan"])]
    regime: Option<String>,
    /// Discriminator steps per generator step.
    #[arg(long)]
    disc_steps: Option<usize>,
    /// Monte-Carlo rollouts per prefix (creative_gan only).
    #[arg(long)]
    rollouts: Option<usize>,
    /// Start a new adversarial phase from a gan checkpoint instead of
    /// resuming it.
    #[arg(long)]
    restart: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    num: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum new tokens per sample; the checkpoint's BPTT length by default.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Text every sample continues from.
    #[arg(long)]
    prompt: Option<String>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ReportFormat {
    Table,
    Jsonl,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Comma-separated checkpoint paths; all must share one vocabulary.
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    /// Samples drawn per model for distinct-n.
    #[arg(long, default_value_t = 20)]
    num_samples: usize,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
}

/// A failed invocation and its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    fn report(&self) -> ExitCode {
        let (kind, code, msg) = match self {
            Self::Usage(m) => ("usage", 2, m),
            Self::Runtime(m) => ("runtime", 1, m),
        };
        let line = serde_json::json!({ "error": kind, "exit_code": code, "message": msg });
        eprintln!("{line}");
        ExitCode::from(code)
    }
}

impl From<textgan::Error> for Failure {
    fn from(e: textgan::Error) -> Self {
        use textgan::Error as E;
        match e {
            E::Config { .. } | E::InvalidConfig(_) | E::Unsupported(_) => Self::Usage(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<textgan::corpus::CorpusError> for Failure {
    fn from(e: textgan::corpus::CorpusError) -> Self {
        Self::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            let msg = first.strip_prefix("error: ").unwrap_or(first).to_string();
            let _ = e.print();
            return Failure::usage(msg).report();
        }
    };
    let root = cli.output_root;
    let result = match cli.command {
        Command::Split(a) => commands::split(&a, &root),
        Command::Pretrain(a) => commands::pretrain(&a, &root),
        Command::Finetune(a) => commands::finetune(&a, &root),
        Command::GanTrain(a) => commands::gan_train(&a, &root),
        Command::Generate(a) => commands::generate(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
