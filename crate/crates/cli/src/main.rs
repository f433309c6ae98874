//! `downscale-lab`: command-line driver for corpus filtering, tokenizer
//! training, pre-training grids, cost accounting and scaling analysis.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "downscale-lab", version, about = "Reduced-vocabulary MLM pre-training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic child-directed corpus (and optionally a classification task).
    Synth(SynthArgs),
    /// Build a word vocabulary from transcript lines.
    BuildVocab(BuildVocabArgs),
    /// Keep only vocabulary-admissible spans or sentences of a JSONL corpus.
    Filter(FilterArgs),
    /// Train a byte-level BPE tokenizer on filtered spans.
    TrainTokenizer(TrainTokenizerArgs),
    /// Word-split ratio, ESMS and selection over tokenizer candidates.
    EvalTokenizer(EvalTokenizerArgs),
    /// Expand a grid spec into model configs.
    Grid(GridArgs),
    /// Pre-train one model with the MLM objective.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint (or a random init) on a labeled task.
    Finetune(FinetuneArgs),
    /// Parameter count and per-sequence FLOPs of a config.
    Flops(FlopsArgs),
    /// Compute-optimal frontier over run logs.
    Frontier(FrontierArgs),
    /// Fit y = C·x^e to two CSV columns.
    Fit(FitArgs),
    /// Two-regime power-law fit with threshold search.
    Break(FitArgs),
    /// Incremental cost-effectiveness along a ladder of runs.
    Icer(IcerArgs),
    /// Spearman correlation of two CSV columns.
    Correlate(CorrelateArgs),
    /// Tables and SVG figures for a set of runs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    documents: usize,
    #[arg(long, default_value_t = 4)]
    min_sentences: usize,
    #[arg(long, default_value_t = 16)]
    max_sentences: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    neutral_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Documents as JSONL (`{"id", "text"}`).
    #[arg(long)]
    out: PathBuf,
    /// Also write the generator's lexicon as a word list.
    #[arg(long)]
    lexicon_out: Option<PathBuf>,
    /// Also write the animal classification task (train.jsonl, valid.jsonl) here.
    #[arg(long)]
    task_out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    task_train: usize,
    #[arg(long, default_value_t = 256)]
    task_valid: usize,
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    /// Transcript text, one utterance per line.
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    stoplist: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Span,
    Sentence,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Documents as JSONL with a `text` field.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "corpus")]
    corpus: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Span)]
    mode: ModeArg,
    #[arg(long, default_value_t = 110)]
    span_size: usize,
    #[arg(long, default_value_t = 30)]
    stride: usize,
    #[arg(long, default_value_t = 110)]
    target_words: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainTokenizerArgs {
    #[arg(long)]
    spans: PathBuf,
    #[arg(long)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on a seeded sample of at most this many spans.
    #[arg(long)]
    max_spans: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalTokenizerArgs {
    #[arg(long = "tokenizer", required = true)]
    tokenizers: Vec<PathBuf>,
    #[arg(long)]
    spans: PathBuf,
    /// ESMS reference TSV; defaults to the bundled list.
    #[arg(long)]
    esms: Option<PathBuf>,
    /// Score only the published reference entries.
    #[arg(long)]
    canonical_only: bool,
    /// Reference ratio per family, e.g. `bpe=1.32`. Enables selection.
    #[arg(long = "reference")]
    references: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    InverseSqrt,
    Linear,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlopsModeArg {
    Verbatim,
    SCorrected,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Model config JSON; `vocab_size` must match the tokenizer.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    spans: PathBuf,
    /// Held-out spans; without it `--eval-size` spans are split off `--spans`.
    #[arg(long)]
    eval_spans: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    eval_size: usize,
    /// Full optimizer settings as JSON; the flags below override it.
    #[arg(long)]
    hyper: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    log_every: u64,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    #[arg(long, value_enum, default_value_t = FlopsModeArg::SCorrected)]
    flops_mode: FlopsModeArg,
    #[arg(long, default_value = "run")]
    run_id: String,
    /// Write checkpoints every N steps (and at the last step).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Output directory: `<run_id>.csv`, `<run_id>.json`, `checkpoints/<run_id>/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long, conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
    /// Model config for a randomly initialized baseline.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long)]
    tokenizer: PathBuf,
    /// JSONL rows `{"text", "text_b"?, "label"}`.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long, default_value_t = 32)]
    seq_len: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    peak_lr: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FlopsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = FlopsModeArg::SCorrected)]
    mode: FlopsModeArg,
    /// Sequence length; defaults to the config's `max_seq_len`.
    #[arg(long)]
    seq_len: Option<usize>,
    /// With `--batch`, also report total training FLOPs.
    #[arg(long, requires = "batch")]
    updates: Option<u64>,
    #[arg(long, requires = "updates")]
    batch: Option<u64>,
}

#[derive(Args, Debug)]
struct FrontierArgs {
    /// RunLog CSVs (each with its JSON sidecar).
    #[arg(long = "runs", required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 32)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Headed CSV, e.g. the output of `frontier`.
    #[arg(long)]
    frontier: PathBuf,
    #[arg(long, default_value = "flops")]
    x_col: String,
    #[arg(long, default_value = "loss")]
    y_col: String,
    /// Ignore points with x below this value.
    #[arg(long)]
    min_x: Option<f64>,
    /// Ordinary least squares in log space instead of Levenberg–Marquardt.
    #[arg(long)]
    log_space: bool,
}

#[derive(Args, Debug)]
struct IcerArgs {
    /// RunLog CSVs in ladder order; each rung uses its run's last record.
    #[arg(long = "runs", num_args = 1.., conflicts_with = "ladder")]
    runs: Vec<PathBuf>,
    /// JSON list of `{config, perplexity, flops}`.
    #[arg(long)]
    ladder: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorrelateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    x_col: String,
    #[arg(long)]
    y_col: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "runs", required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 32)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DOWNSCALE_LAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("DOWNSCALE_LAB_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| commands::run(cli.command));
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
