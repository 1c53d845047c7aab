use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Speculative decoding with semantic adaptive tokens on toy transformers.
#[derive(Debug, Parser)]
#[command(name = "sdsat", version, args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a corpus and write a checkpoint and loss CSV.
    Train(TrainArgs),
    /// Sweep k and temperature over a prompt set and write bench CSVs.
    Bench(BenchArgs),
    /// Check speculative output against plain decoding.
    Verify(VerifyArgs),
    /// Generate continuations for prompts.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Basic,
    Improved,
    /// Train both modes from the same initialization; the checkpoint is the improved one.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdaptiveArg {
    Identical,
    Diverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// One UTF-8 line per entry, byte-tokenized.
    Text,
    /// Whitespace-separated token ids, one entry per line.
    Ids,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key=value` file; every key is a flag name. Flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub corpus_format: Format,
    /// Rearrange text documents for fill-in-the-middle training.
    #[arg(long)]
    pub infill: bool,
    /// Output checkpoint path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Loss CSV path.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "improved")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "identical")]
    pub adaptive_tokens: AdaptiveArg,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 5)]
    pub mask_window: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mask_rate: f64,
    /// Weight of the adaptive-token term in improved mode.
    #[arg(long, default_value_t = 1.0)]
    pub w: f64,
    #[arg(long, default_value_t = 8)]
    pub n_adaptive: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 128)]
    pub max_seq: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print a progress line every this many steps (0 = silent).
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

/// Options shared by every command that decodes.
#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub prompt_format: Format,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f64,
    #[arg(long, default_value_t = 32)]
    pub max_new: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "identical")]
    pub adaptive_tokens: AdaptiveArg,
    /// Token ids that end a generation.
    #[arg(long, value_delimiter = ',')]
    pub stop_ids: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Comma-separated draft lengths; 0 is plain decoding.
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5,9,13")]
    pub k: Vec<usize>,
    /// Comma-separated temperatures; 0 is greedy.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub temperature: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Mask window the model was trained with; larger k only draws a warning.
    #[arg(long, default_value_t = 5)]
    pub mask_window: usize,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub plot_svg: Option<PathBuf>,
    /// Leave tokens/s and loop times empty so the CSVs are byte-stable.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub model_tag: Option<String>,
    #[arg(long)]
    pub dataset_tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,5,13")]
    pub k: Vec<usize>,
    /// Sampling temperature of the distribution check.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Generations per k in the distribution check (0 skips it).
    #[arg(long, default_value_t = 2000)]
    pub chi_trials: usize,
    /// Leading positions compared in the distribution check.
    #[arg(long, default_value_t = 2)]
    pub chi_depth: usize,
    /// Smallest acceptable chi-square p-value.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Replace verification with one that accepts every draft.
    #[arg(long, hide = true)]
    pub corrupt_verifier: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
}
