use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "spts", version, about = "Token-skipping prefill for decoder-only transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded random model.
    GenModel(GenModelArgs),
    /// Write seeded random token-ID sequences.
    GenTokens(GenTokensArgs),
    /// Build low-rank feed-forward proxies from calibration sequences.
    Calibrate(CalibrateArgs),
    /// Prefill and greedily decode prompts.
    Run(RunArgs),
    /// Analytic memory or FLOPs tables.
    Bench(BenchArgs),
    /// Fidelity and attention statistics against the dense model.
    Diag(DiagArgs),
}

/// `--seed`; the `SPTS_SEED` environment variable takes precedence.
#[derive(Debug, Args)]
pub struct SeedArg {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Key/value heads; defaults to `--heads`.
    #[arg(long)]
    pub kv_heads: Option<usize>,
    /// Per-head width; defaults to `dim / heads`.
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub ffn: usize,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[arg(long, default_value_t = 10_000.0)]
    pub rope_theta: f32,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenTokensArgs {
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub len: usize,
    #[arg(long)]
    pub vocab: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Disabled,
    #[value(name = "llama-3.1-8b")]
    Llama,
    #[value(name = "qwen-2.5-7b")]
    Qwen,
    #[value(name = "openpangu-1b")]
    Pangu,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Schedule file (`key = value` lines).
    #[arg(long, conflicts_with = "preset")]
    pub schedule: Option<PathBuf>,
    /// Built-in schedule.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Calibration token-ID file.
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub dlow: usize,
    #[arg(long)]
    pub rank: usize,
    /// Top fraction of calibration samples averaged per channel.
    #[arg(long, default_value_t = spts_core::ffn::DEFAULT_RHO)]
    pub rho: f64,
    /// Layers to calibrate (1-based); defaults to the schedule's skipping
    /// layers, or every layer without a schedule.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Token-ID file; each line is one prompt.
    #[arg(long)]
    pub prompt_ids: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub gen: usize,
    /// Proxy file from `calibrate`; without it, feed-forward selection uses
    /// attention scores alone.
    #[arg(long)]
    pub proxy: Option<PathBuf>,
    /// Run the dense model instead of the schedule.
    #[arg(long)]
    pub baseline: bool,
    /// Write the JSON summary here instead of standard output.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Shape {
    Toy,
    #[value(name = "llama-3.1-8b")]
    Llama,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Heads {
    /// Every query head counted, as if keys and values were not grouped.
    Query,
    /// Actual key/value heads.
    Kv,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("table").required(true).args(["memory", "flops"])))]
pub struct BenchArgs {
    #[arg(long)]
    pub memory: bool,
    #[arg(long)]
    pub flops: bool,
    /// Model file whose shape to use.
    #[arg(long, conflicts_with = "shape")]
    pub model: Option<PathBuf>,
    /// Built-in model shape.
    #[arg(long, value_enum, default_value = "llama-3.1-8b")]
    pub shape: Shape,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Prompt lengths; a `K` suffix multiplies by 1024.
    #[arg(long, value_delimiter = ',', default_value = "8K,16K,24K,32K")]
    pub lengths: Vec<String>,
    #[arg(long, value_enum, default_value = "query")]
    pub heads: Heads,
    /// Proxy channels for the FLOPs table; omit for attention-only selection.
    #[arg(long, requires = "rank")]
    pub dlow: Option<usize>,
    #[arg(long, requires = "dlow")]
    pub rank: Option<usize>,
    /// Generated tokens for the decode phase.
    #[arg(long, default_value_t = 16)]
    pub gen: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// CSV destination; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("report").required(true).multiple(true).args(["fidelity", "attention"])))]
pub struct DiagArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub prompt_ids: PathBuf,
    #[arg(long)]
    pub proxy: Option<PathBuf>,
    /// Per-layer cosine similarities against the dense model.
    #[arg(long)]
    pub fidelity: bool,
    /// Per-layer attention coverage and top-set stability.
    #[arg(long)]
    pub attention: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.95")]
    pub coverage: Vec<f64>,
    /// Size of the top set compared across layers.
    #[arg(long, default_value_t = 8)]
    pub top: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}
