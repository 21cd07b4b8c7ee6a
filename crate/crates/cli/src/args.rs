//! Command-line surface.

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use dagnat_core::glancing::MaskVariant;
use dagnat_model::tape::Objective;

#[derive(Debug, Parser)]
#[command(name = "dagnat", version, about = "Directed acyclic graph decoder for non-autoregressive translation")]
pub struct Cli {
    /// Seed for every randomized component.
    #[arg(long, global = true, env = "DAGNAT_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Flat key=value file supplying values for any long flag
    /// (`batch_tokens=500` stands for `--batch-tokens 500`); explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-reference task.
    GenData(GenDataArgs),
    /// Train a model with glancing and write a checkpoint plus a metrics CSV.
    Train(TrainArgs),
    /// Decode source lines with a trained model.
    Decode(DecodeArgs),
    /// Score hypotheses against reference sets and report JSON.
    Eval(EvalArgs),
    /// Fit an n-gram language model on the target side of a corpus.
    LmTrain(LmTrainArgs),
    /// Write the graph of one source as JSON and DOT.
    ExportDag(ExportDagArgs),
    /// Aggregate graph statistics over a file of sources.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory for train.tsv, eval.tsv, eval.src and vocab.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub alphabet_size: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// Number of synonym maps.
    #[arg(long, default_value_t = 2)]
    pub num_maps: usize,
    /// Comma-separated order transforms (forward, reverse).
    #[arg(long, default_value = "forward,reverse")]
    pub orders: String,
    #[arg(long, default_value_t = 2000)]
    pub train_sources: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_sources: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training pairs (source TAB target).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation pairs, grouped by source into reference sets.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output directory for model.ckpt, metrics.csv and config.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; model flags are then taken from it. Use the
    /// same data, seed and training flags as the original run to reproduce it.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    #[arg(long, default_value_t = 64)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub num_heads: usize,
    #[arg(long, default_value_t = 2)]
    pub encoder_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub decoder_layers: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
    /// Graph size multiplier.
    #[arg(long, default_value_t = 4)]
    pub lambda: usize,
    /// Longest accepted source; defaults to the longest source in the data.
    #[arg(long)]
    pub max_source_len: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,

    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Target tokens per optimizer step.
    #[arg(long, default_value_t = 2000)]
    pub batch_tokens: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub peak_lr: f64,
    #[arg(long, default_value_t = 500)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub label_smoothing: f64,
    /// Glancing strategy: all, uniform or adaptive.
    #[arg(long, default_value = "adaptive")]
    pub glancing: MaskVariant,
    #[arg(long, default_value_t = 0.5)]
    pub tau_start: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau_end: f64,
    /// Path objective: sum or max.
    #[arg(long, default_value = "sum")]
    pub objective: Objective,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    /// Validate and log a metrics row every this many steps.
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    /// Use only the first N validation sources.
    #[arg(long)]
    pub valid_limit: Option<usize>,
    /// Also write `step-<n>.ckpt` snapshots every this many steps; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub save_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Greedy,
    Lookahead,
    Beam,
    Sample,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// One source per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "decode", value_enum, default_value = "lookahead")]
    pub strategy: Strategy,
    /// Length normalization exponent.
    #[arg(long, default_value_t = 1.1)]
    pub alpha: f64,
    /// Language-model weight.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 200)]
    pub beam_size: usize,
    #[arg(long, default_value_t = 10)]
    pub per_length_cap: usize,
    #[arg(long, default_value_t = 5)]
    pub expand_top_k: usize,
    #[arg(long, default_value_t = 0.8)]
    pub top_p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Samples per source (sample strategy); written on consecutive lines.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// N-gram model for beam rescoring.
    #[arg(long)]
    pub lm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Hypotheses, `k` consecutive lines per source.
    #[arg(long)]
    pub hyps: PathBuf,
    /// Reference pairs (source TAB reference), grouped by source.
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Add-one smoothing for orders above one.
    #[arg(long)]
    pub smooth: bool,
    /// Reference-length bucket edges.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,40")]
    pub bucket_edges: Vec<usize>,
    /// Model used for best-assignment token accuracy.
    #[arg(long, requires = "vocab")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LmTrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = dagnat_core::lm::DEFAULT_BACKOFF)]
    pub backoff: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportDagArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Source sentence, whitespace-tokenized.
    #[arg(long)]
    pub source: String,
    /// Output prefix; writes PREFIX.json and PREFIX.dot.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub min_passing: f64,
    #[arg(long, default_value_t = 0.9)]
    pub edge_mass: f64,
    /// Tokens shown per vertex.
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// One source per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Vertices below this passing probability are left out of the degree histogram.
    #[arg(long, default_value_t = 0.2)]
    pub passing_floor: f64,
    /// Transition mass an out-degree must cover.
    #[arg(long, default_value_t = 0.8)]
    pub edge_mass: f64,
    /// Count successors that predict the same token as one edge.
    #[arg(long)]
    pub merge_same_token: bool,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
