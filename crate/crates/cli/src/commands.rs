use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use downscale_core::analysis::{
    compute_optimal_frontier, detect_break, fit_power_law, fit_power_law_log, icer, spearman,
    LadderRung, ICER_FLOPS_UNIT,
};
use downscale_core::corpus::{
    build_vocabulary, filter_corpus_parallel, read_documents_jsonl, read_spans_jsonl,
    read_word_list, split_dataset, write_spans_jsonl, write_word_list, FilterConfig, FilterMode,
    FilterStats, TextSpan, VocabularySpec,
};
use downscale_core::costmodel::{count_params, flops_per_sequence_at, total_flops, CostBreakdown, FlopsMode};
use downscale_core::grid::{generate_grid, GridSpec};
use downscale_core::model::{init_model, read_checkpoint, ModelConfig};
use downscale_core::report::{frontier_to_csv, read_xy_csv, write_report};
use downscale_core::synth::{self, AnimalTaskConfig, SynthCorpusConfig};
use downscale_core::tokenizer::{
    default_esms_reference, esms, read_tokenizer, word_split_ratio, write_tokenizer, BpeTrainer,
    CandidateScore, EsmsReference, TokenizerModel,
};
use downscale_core::trainer::{
    finetune, pretrain, CheckpointPolicy, FinetuneOptions, FinetuneTask, OptimizerHyper,
    PretrainOptions, RunLog, Schedule, TextExample,
};

use crate::{
    BuildVocabArgs, Command, CorrelateArgs, EvalTokenizerArgs, FilterArgs, FinetuneArgs,
    FitArgs, FlopsArgs, FlopsModeArg, FrontierArgs, GridArgs, IcerArgs, ModeArg, PretrainArgs,
    ReportArgs, ScheduleArg, SynthArgs, TrainTokenizerArgs,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth_cmd(a),
        Command::BuildVocab(a) => build_vocab(a),
        Command::Filter(a) => filter(a),
        Command::TrainTokenizer(a) => train_tokenizer(a),
        Command::EvalTokenizer(a) => eval_tokenizer(a),
        Command::Grid(a) => grid(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Flops(a) => flops(a),
        Command::Frontier(a) => frontier(a),
        Command::Fit(a) => fit(a),
        Command::Break(a) => break_cmd(a),
        Command::Icer(a) => icer_cmd(a),
        Command::Correlate(a) => correlate(a),
        Command::Report(a) => report(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    emit(out, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_spans(path: &Path) -> Result<Vec<TextSpan>> {
    read_spans_jsonl(open(path)?).with_context(|| format!("reading spans {}", path.display()))
}

fn load_tokenizer(path: &Path) -> Result<TokenizerModel> {
    read_tokenizer(open(path)?).with_context(|| format!("reading tokenizer {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let cfg = SynthCorpusConfig {
        documents: a.documents,
        min_sentences: a.min_sentences,
        max_sentences: a.max_sentences,
        noise_rate: a.noise_rate,
        neutral_rate: a.neutral_rate,
        seed: a.seed,
    };
    let docs = synth::generate_documents(&cfg)?;
    let rows: Vec<serde_json::Value> = docs
        .iter()
        .map(|d| serde_json::json!({"id": d.id, "text": d.text}))
        .collect();
    write_jsonl(&a.out, &rows)?;
    if let Some(p) = &a.lexicon_out {
        let vocab = VocabularySpec::from_words(synth::lexicon())?;
        write_word_list(create(p)?, &vocab)?;
    }
    if let Some(dir) = &a.task_out {
        let (train, valid) = synth::animal_task_examples(&AnimalTaskConfig {
            train_examples: a.task_train,
            valid_examples: a.task_valid,
            seed: a.seed,
            ..Default::default()
        })?;
        write_jsonl(&dir.join("train.jsonl"), &train)?;
        write_jsonl(&dir.join("valid.jsonl"), &valid)?;
    }
    Ok(())
}

fn build_vocab(a: BuildVocabArgs) -> Result<()> {
    let data = fs::read(&a.transcripts).with_context(|| format!("reading {}", a.transcripts.display()))?;
    let stop: BTreeSet<String> = match &a.stoplist {
        Some(p) => read_word_list(open(p)?)?.into_iter().collect(),
        None => BTreeSet::new(),
    };
    let (vocab, stats) = build_vocabulary(data.split(|&b| b == b'\n'), &stop);
    write_word_list(create(&a.out)?, &vocab)?;
    emit_json(
        None,
        &serde_json::json!({
            "words": vocab.len(),
            "lines": stats.lines,
            "rejected_lines": stats.rejected_lines,
            "stopped_words": stats.stopped_words,
        }),
    )
}

fn filter(a: FilterArgs) -> Result<()> {
    let words = read_word_list(open(&a.vocab)?)?;
    let vocab = VocabularySpec::from_words(words)?;
    let (docs, decode_failures) = read_documents_jsonl(open(&a.input)?, &a.corpus)?;
    let cfg = FilterConfig {
        mode: match a.mode {
            ModeArg::Span => FilterMode::Span,
            ModeArg::Sentence => FilterMode::Sentence,
        },
        span_size: a.span_size,
        stride: a.stride,
        target_span_words: a.target_words,
        ..Default::default()
    };
    let spans = filter_corpus_parallel(&docs, &vocab, cfg)?;
    write_spans_jsonl(create(&a.out)?, &spans)?;
    emit_json(
        None,
        &FilterStats {
            documents: docs.len(),
            decode_failures,
            spans: spans.len(),
        },
    )
}

fn train_tokenizer(a: TrainTokenizerArgs) -> Result<()> {
    let spans = load_spans(&a.spans)?;
    let mut trainer = BpeTrainer::new(a.vocab_size, a.seed);
    trainer.max_spans = a.max_spans;
    let model = trainer.train(&spans)?;
    write_tokenizer(create(&a.out)?, &model)?;
    if model.vocab_size() < a.vocab_size {
        eprintln!(
            "warning: corpus supported only {} of {} tokens",
            model.vocab_size(),
            a.vocab_size
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TokenizerEval {
    path: PathBuf,
    #[serde(flatten)]
    score: CandidateScore,
    mean_span_tokens: f64,
}

fn eval_tokenizer(a: EvalTokenizerArgs) -> Result<()> {
    let spans = load_spans(&a.spans)?;
    if spans.is_empty() {
        bail!("no spans in {}", a.spans.display());
    }
    let mut reference = match &a.esms {
        Some(p) => EsmsReference::parse_tsv(&fs::read_to_string(p)?)?,
        None => default_esms_reference(),
    };
    if a.canonical_only {
        reference = reference.canonical_only();
    }
    let mut evals = Vec::new();
    for path in &a.tokenizers {
        let tok = load_tokenizer(path)?;
        let total: usize = spans.iter().map(|s| tok.encode(&s.text).len()).sum();
        evals.push(TokenizerEval {
            path: path.clone(),
            score: CandidateScore {
                family: tok.family().to_string(),
                vocab_size: tok.vocab_size(),
                word_split_ratio: word_split_ratio(&tok, &spans, a.seed)?,
                esms: esms(&tok, &reference)?,
            },
            mean_span_tokens: total as f64 / spans.len() as f64,
        });
    }
    let winner = if a.references.is_empty() {
        None
    } else {
        let mut refs = HashMap::new();
        for r in &a.references {
            let (fam, ratio) = r
                .split_once('=')
                .ok_or_else(|| anyhow!("reference must look like family=ratio, got {r:?}"))?;
            refs.insert(fam.to_string(), ratio.parse::<f64>().with_context(|| format!("ratio in {r:?}"))?);
        }
        let scores: Vec<CandidateScore> = evals.iter().map(|e| e.score.clone()).collect();
        Some(downscale_core::tokenizer::select_by_scores(&scores, &refs)?)
    };
    emit_json(
        None,
        &serde_json::json!({
            "esms_entries": reference.len(),
            "candidates": evals,
            "winner": winner.map(|i| a.tokenizers[i].clone()),
        }),
    )
}

fn grid(a: GridArgs) -> Result<()> {
    let spec: GridSpec = read_json(&a.spec)?;
    emit_json(a.out.as_deref(), &generate_grid(&spec)?)
}

fn flops_mode(m: FlopsModeArg) -> FlopsMode {
    match m {
        FlopsModeArg::Verbatim => FlopsMode::Verbatim,
        FlopsModeArg::SCorrected => FlopsMode::SCorrected,
    }
}

fn pretrain_cmd(a: PretrainArgs) -> Result<()> {
    let cfg: ModelConfig = read_json(&a.config)?;
    cfg.validate()?;
    let tok = load_tokenizer(&a.tokenizer)?;
    if cfg.vocab_size != tok.vocab_size() {
        bail!(
            "config vocab_size {} does not match the tokenizer's {}",
            cfg.vocab_size,
            tok.vocab_size()
        );
    }
    let spans = load_spans(&a.spans)?;
    let (train_spans, eval_spans) = match &a.eval_spans {
        Some(p) => (spans, load_spans(p)?),
        None => {
            let split = split_dataset(spans, a.eval_size, 0, a.seed)?;
            (split.train, split.dev)
        }
    };
    let encode = |s: &[TextSpan]| -> Vec<Vec<u32>> { s.iter().map(|x| tok.encode(&x.text)).collect() };
    let (train, eval) = (encode(&train_spans), encode(&eval_spans));

    let mut hyper: OptimizerHyper = match &a.hyper {
        Some(p) => read_json(p)?,
        None => OptimizerHyper::default(),
    };
    if let Some(s) = a.steps {
        hyper.total_steps = s;
    }
    if let Some(b) = a.batch_size {
        hyper.batch_size = b;
    }
    if let Some(lr) = a.peak_lr {
        hyper.peak_lr = lr;
    }
    if let Some(s) = a.schedule {
        hyper.schedule = match s {
            ScheduleArg::InverseSqrt => Schedule::InverseSqrt,
            ScheduleArg::Linear => Schedule::Linear,
        };
    }
    let opts = PretrainOptions {
        run_id: a.run_id.clone(),
        seed: a.seed,
        log_every: a.log_every,
        mask_rate: a.mask_rate,
        flops_mode: flops_mode(a.flops_mode),
        checkpoint: Some(CheckpointPolicy {
            root: a.out.join("checkpoints"),
            every: a.checkpoint_every.unwrap_or(u64::MAX),
        }),
    };
    let params = init_model(&cfg, a.seed)?;
    let outcome = pretrain(params, &train, &eval, &hyper, &opts)?;
    let csv = a.out.join(format!("{}.csv", a.run_id));
    outcome.log.save(&csv)?;
    let last = outcome.log.last().copied();
    emit_json(
        None,
        &serde_json::json!({
            "run_id": a.run_id,
            "log": csv,
            "steps_completed": outcome.log.steps_completed,
            "final": last,
        }),
    )
}

fn finetune_cmd(a: FinetuneArgs) -> Result<()> {
    let tok = load_tokenizer(&a.tokenizer)?;
    let params = match (&a.checkpoint, &a.config) {
        (Some(p), _) => read_checkpoint(p)?.params,
        (None, Some(c)) => init_model(&read_json(c)?, a.init_seed)?,
        (None, None) => bail!("pass --checkpoint or --config"),
    };
    if params.config.vocab_size != tok.vocab_size() {
        bail!("model vocabulary does not match the tokenizer");
    }
    if a.seq_len > params.config.max_seq_len {
        bail!("--seq-len exceeds the model's max_seq_len {}", params.config.max_seq_len);
    }
    let train: Vec<TextExample> = read_jsonl(&a.train)?;
    let valid: Vec<TextExample> = read_jsonl(&a.valid)?;
    let name = a
        .train
        .parent()
        .and_then(|d| d.file_name())
        .map_or("task".to_string(), |n| n.to_string_lossy().into_owned());
    let task = FinetuneTask::from_text(name, &tok, &train, &valid, a.seq_len);
    let opts = FinetuneOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        peak_lr: a.peak_lr,
        seeds: a.seeds,
        ..Default::default()
    };
    emit_json(a.out.as_deref(), &finetune(&params, &task, &opts)?)
}

#[derive(Serialize)]
struct FlopsReport {
    config: ModelConfig,
    params: u64,
    #[serde(flatten)]
    breakdown: CostBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_flops: Option<f64>,
}

fn flops(a: FlopsArgs) -> Result<()> {
    let cfg: ModelConfig = read_json(&a.config)?;
    cfg.validate()?;
    let breakdown = flops_per_sequence_at(&cfg, a.seq_len.unwrap_or(cfg.max_seq_len), flops_mode(a.mode));
    let total = match (a.updates, a.batch) {
        (Some(u), Some(b)) => Some(total_flops(breakdown.c_seq, u, b)),
        _ => None,
    };
    emit_json(
        None,
        &FlopsReport {
            config: cfg,
            params: count_params(&cfg),
            breakdown,
            total_flops: total,
        },
    )
}

fn load_runs(paths: &[PathBuf]) -> Result<Vec<RunLog>> {
    paths
        .iter()
        .map(|p| RunLog::load(p).with_context(|| format!("loading run {}", p.display())))
        .collect()
}

fn frontier(a: FrontierArgs) -> Result<()> {
    let runs = load_runs(&a.runs)?;
    emit(a.out.as_deref(), &frontier_to_csv(&compute_optimal_frontier(&runs, a.bins)?))
}

fn fit_points(a: &FitArgs) -> Result<(Vec<(f64, f64)>, String)> {
    let text = fs::read_to_string(&a.frontier).with_context(|| format!("reading {}", a.frontier.display()))?;
    let mut pts = read_xy_csv(&text, &a.x_col, &a.y_col)?;
    if let Some(m) = a.min_x {
        pts.retain(|p| p.0 >= m);
    }
    Ok((pts, text))
}

fn fit(a: FitArgs) -> Result<()> {
    let (pts, _) = fit_points(&a)?;
    let f = if a.log_space { fit_power_law_log(&pts)? } else { fit_power_law(&pts)? };
    emit_json(None, &f)
}

fn break_cmd(a: FitArgs) -> Result<()> {
    let (mut pts, text) = fit_points(&a)?;
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Candidates are the frontier's bin edges when present, else midpoints.
    let mut cands: Vec<f64> = ["bin_lo", "bin_hi"]
        .iter()
        .filter_map(|c| read_xy_csv(&text, c, c).ok())
        .flatten()
        .map(|p| p.0)
        .collect();
    if cands.is_empty() {
        cands = pts.windows(2).map(|w| (w[0].0 * w[1].0).sqrt()).collect();
    }
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    emit_json(None, &detect_break(&pts, &cands)?)
}

fn icer_cmd(a: IcerArgs) -> Result<()> {
    let ladder: Vec<LadderRung> = match &a.ladder {
        Some(p) => read_json(p)?,
        None => {
            if a.runs.is_empty() {
                bail!("pass --runs or --ladder");
            }
            load_runs(&a.runs)?
                .iter()
                .map(|r| {
                    let last = r.last().ok_or_else(|| anyhow!("run {} has no records", r.run_id))?;
                    Ok(LadderRung {
                        config: r.config,
                        perplexity: last.eval_ppl,
                        flops: last.flops,
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let entries = icer(&ladder)?;
    let mut s = format!(
        "from,to,delta_perplexity,delta_flops,icer_per_{:e}_flops\n",
        ICER_FLOPS_UNIT
    );
    for e in entries {
        s.push_str(&format!(
            "\"{}\",\"{}\",{},{:e},{}\n",
            e.from, e.to, e.delta_perplexity, e.delta_flops, e.icer
        ));
    }
    emit(a.out.as_deref(), &s)
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let pts = read_xy_csv(&text, &a.x_col, &a.y_col)?;
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    emit_json(None, &spearman(&x, &y)?)
}

fn report(a: ReportArgs) -> Result<()> {
    let runs = load_runs(&a.runs)?;
    emit_json(None, &write_report(&runs, a.bins, &a.out)?)
}
