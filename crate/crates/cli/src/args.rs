use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "tprf",
    version,
    about = "Dense retrieval with transformer pseudo-relevance feedback",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for parallel stages. `bench` and `sweep` default to 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key = value` file of option defaults; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

pub const SUBCOMMANDS: [&str; 7] = [
    "ingest", "synth", "search", "train", "eval", "bench", "sweep",
];

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an `id<TAB>v1,v2,...` text dump into a vector store.
    #[command(args_override_self = true)]
    Ingest(IngestArgs),
    /// Generate the seeded synthetic corpus, queries and qrels.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Retrieve with optional PRF and write a TREC run file.
    #[command(args_override_self = true)]
    Search(SearchArgs),
    /// Train the PRF encoder (or a layers x heads grid of them).
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score one run, or compare two with paired t-tests.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Per-query latency of one method, and model-size accounting.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Latency as a function of PRF depth.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Prf {
    None,
    Avg,
    Rocchio,
    Tprf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainArg {
    Linear,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Query,
    Mean,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 768)]
    pub dim: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 100)]
    pub passages: usize,
    #[arg(long, default_value_t = 5)]
    pub relevant: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub sigma_rel: f64,
    #[arg(long, default_value_t = 0.6)]
    pub sigma_query: f64,
    #[arg(long, default_value_t = 1)]
    pub queries_per_cluster: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also write train/validation query splits, every Nth query held out.
    #[arg(long, value_name = "N")]
    pub holdout: Option<usize>,
}

/// Retrieval method and its parameters.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = Prf::None)]
    pub prf: Prf,
    /// PRF depth.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// First-round ranking depth; defaults to `k`.
    #[arg(long)]
    pub first_stage_k: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub final_k: usize,
    /// Rocchio query weight.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    /// Rocchio feedback weight.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f32,
    /// Checkpoint file, or a training output directory (its best epoch).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Run tag; defaults to the method name.
    #[arg(long)]
    pub tag: Option<String>,
    #[command(flatten)]
    pub method: MethodArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Validation queries; without them every Nth training query is held out.
    #[arg(long)]
    pub val_queries: Option<PathBuf>,
    /// Validation qrels; defaults to `--qrels`.
    #[arg(long)]
    pub val_qrels: Option<PathBuf>,
    #[arg(long, default_value_t = 5, value_name = "N")]
    pub holdout: usize,
    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 1024)]
    pub ffn: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f32,
    #[arg(long, value_enum, default_value_t = PoolingArg::Query)]
    pub pooling: PoolingArg,

    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub negatives: usize,
    #[arg(long, default_value_t = 10)]
    pub neg_low: usize,
    #[arg(long, default_value_t = 200)]
    pub neg_high: usize,
    /// PRF depth.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,

    /// Layer counts of a grid run (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub grid_layers: Vec<usize>,
    /// Head counts of a grid run (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub grid_heads: Vec<usize>,
    /// Add the one-layer one-head model to the grid.
    #[arg(long)]
    pub grid_single: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub run: PathBuf,
    /// Second run, tested against `--run` as the baseline.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Minimum grade counted relevant by MAP, RR and recall.
    #[arg(long, default_value_t = 2)]
    pub threshold: u32,
    #[arg(long, value_enum, default_value_t = GainArg::Linear)]
    pub gain: GainArg,
    /// Append per-query rows.
    #[arg(long)]
    pub per_query: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, required_unless_present = "sizes")]
    pub corpus: Option<PathBuf>,
    #[arg(long, required_unless_present = "sizes")]
    pub queries: Option<PathBuf>,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Sampled queries.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Time the encoder alone (first-round search excluded).
    #[arg(long)]
    pub encode_only: bool,
    /// Print parameter counts and checkpoint sizes for the layers x heads grid.
    #[arg(long)]
    pub sizes: bool,
    #[arg(long, default_value_t = 768)]
    pub size_dim: usize,
    #[arg(long, default_value_t = 1024)]
    pub size_ffn: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub method: MethodArgs,
    /// PRF depths, ascending.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10,20,50,100")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plot-ready CSV (`k,mean_ms,stddev_ms,method`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the text-PRF cost model (`k,tokens,relative_cost`).
    #[arg(long)]
    pub cost_model: Option<PathBuf>,
}
