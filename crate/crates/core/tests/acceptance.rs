//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ... PASS|FAIL` line. Run with `--nocapture` to see them.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;
use std::time::Instant;

use downscale_core::analysis::{average_ranks, detect_break, fit_power_law, log_bin_edges, spearman};
use downscale_core::corpus::{
    filter_corpus_parallel, read_spans_jsonl, FilterConfig, FilterMode, TextSpan, VocabularySpec,
};
use downscale_core::costmodel::{count_params, flops_per_sequence, total_flops, FlopsMode};
use downscale_core::model::{
    grad_mlm, init_model, mlm_loss, read_checkpoint, Mode, ModelConfig, ModelParams,
};
use downscale_core::synth::{animal_task, generate_documents, lexicon, AnimalTaskConfig, SynthCorpusConfig};
use downscale_core::tokenizer::{
    esms, train_bpe, word_split_ratio, EsmsEntry, EsmsReference, TokenizerModel,
};
use downscale_core::trainer::{
    finetune, pretrain, CheckpointPolicy, FinetuneOptions, FinetuneTask, OptimizerHyper,
    PretrainOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, StudentsT};

mod common;

fn report(n: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n:>2} {name}: {verdict} ({detail}; {:.1}s)",
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

const V_REF: usize = 19_000;
const S_REF: usize = 128;

fn ref_cfg(e: usize, h: usize, i: usize, l: usize, a: usize) -> ModelConfig {
    ModelConfig::new(e, h, i, l, a, V_REF, S_REF)
}

/// Published reference rows: (E, H, I, L, A), millions of
/// parameters, FLOPs in units of 1e15.
const TABLE: [((usize, usize, usize, usize, usize), f64, f64); 16] = [
    ((256, 256, 1024, 8, 8), 16.24, 110.0),
    ((32, 256, 1024, 8, 8), 11.89, 80.0),
    ((64, 256, 1024, 8, 8), 12.51, 84.0),
    ((128, 256, 1024, 8, 8), 13.75, 92.0),
    ((256, 32, 1024, 8, 8), 6.10, 42.0),
    ((256, 64, 1024, 8, 8), 7.34, 50.0),
    ((256, 128, 1024, 8, 8), 10.04, 69.0),
    ((256, 256, 128, 8, 8), 7.63, 85.0),
    ((256, 256, 256, 8, 8), 8.15, 88.0),
    ((256, 256, 512, 8, 8), 9.20, 96.0),
    ((256, 256, 1024, 1, 8), 10.71, 73.0),
    ((256, 256, 1024, 2, 8), 11.50, 79.0),
    ((256, 256, 1024, 4, 8), 13.08, 89.0),
    ((32, 32, 128, 2, 2), 1.27, 8.57),
    ((32, 32, 128, 1, 1), 1.25, 8.60),
    ((32, 32, 64, 1, 1), 1.25, 8.71),
];

#[test]
fn criterion_01_flops_reproduction() {
    let t = Instant::now();
    let ladder = [
        (256, 256, 1024, 8, 8),
        (256, 32, 1024, 8, 8),
        (256, 64, 1024, 8, 8),
        (256, 128, 1024, 8, 8),
        (256, 256, 1024, 1, 8),
        (256, 256, 1024, 2, 8),
        (256, 256, 1024, 4, 8),
    ];
    let mut worst = 0.0f64;
    for shape in ladder {
        let (_, _, published) = TABLE.iter().find(|r| r.0 == shape).unwrap();
        let (e, h, i, l, a) = shape;
        let c_seq = flops_per_sequence(&ref_cfg(e, h, i, l, a), FlopsMode::SCorrected).c_seq;
        let ours = total_flops(c_seq, 35_000, 256) / 1e15;
        worst = worst.max((ours / published - 1.0).abs());
    }
    report(1, "FLOPs vs table (7 configs, 5%)", worst <= 0.05, &format!("worst rel err {:.2}%", 100.0 * worst), t);
}

#[test]
fn criterion_02_parameter_counts() {
    let t = Instant::now();
    let mut matched = Vec::new();
    let mut missed = Vec::new();
    for &((e, h, i, l, a), millions, _) in &TABLE {
        let ours = count_params(&ref_cfg(e, h, i, l, a)) as f64 / 1e6;
        if (ours / millions - 1.0).abs() <= 0.02 {
            matched.push((e, h, i, l, a));
        } else {
            missed.push(format!("{:?} {ours:.2}M vs {millions}M", (e, h, i, l, a)));
        }
    }
    let required = [(256, 256, 1024, 8, 8), (32, 32, 64, 1, 1)];
    let pass = matched.len() >= 8 && required.iter().all(|r| matched.contains(r));
    let detail = format!("{}/{} within 2%; off: {}", matched.len(), TABLE.len(), missed.join(", "));
    report(2, "parameter counts vs table", pass, &detail, t);
}

/// Exponents drawn from the regime seen on compute-optimal frontiers.
const FIT_EXPONENTS: std::ops::Range<f64> = -0.15..-0.05;

#[test]
fn criterion_03_power_law_fitter() {
    let t = Instant::now();
    let mut ok = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(5.0..50.0);
        let e = rng.random_range(FIT_EXPONENTS);
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|_| {
                let x = 10f64.powf(rng.random_range(13.0..17.0));
                let z: f64 = StandardNormal.sample(&mut rng);
                (x, c * x.powf(e) * (1.0 + 0.01 * z))
            })
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        if (fit.e - e).abs() <= 0.02 && (fit.c / c - 1.0).abs() <= 0.05 {
            ok += 1;
        }
    }
    report(3, "power-law recovery (50 datasets)", ok >= 48, &format!("{ok}/50 within tolerance, e in {FIT_EXPONENTS:?}, x over 1e13..1e17"), t);
}

const BREAK_AT: f64 = 2.2e15;
const E_LOW: f64 = -0.0929;
const E_HIGH: f64 = -0.1412;
/// Relative drop of the curve at the threshold.
const BREAK_JUMP: f64 = 0.10;

/// One frontier point per log bin over [1e14, 1e17], placed uniformly in
/// log space inside its bin, with 1% multiplicative noise.
fn piecewise_frontier(seed: u64, edges: &[f64]) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_low = 5.0 / 1e15f64.powf(E_LOW);
    let c_high = (1.0 - BREAK_JUMP) * c_low * BREAK_AT.powf(E_LOW) / BREAK_AT.powf(E_HIGH);
    edges
        .windows(2)
        .map(|w| {
            let x = (w[0].ln() + rng.random::<f64>() * (w[1].ln() - w[0].ln())).exp();
            let clean = if x < BREAK_AT { c_low * x.powf(E_LOW) } else { c_high * x.powf(E_HIGH) };
            let z: f64 = StandardNormal.sample(&mut rng);
            (x, clean * (1.0 + 0.01 * z))
        })
        .collect()
}

#[test]
fn criterion_04_break_detection() {
    let t = Instant::now();
    let edges = log_bin_edges(1e14, 1e17, 32).unwrap();
    let width = (1e17f64 / 1e14).ln() / 32.0;
    let mut ok = 0;
    let mut found = Vec::new();
    for seed in 0..10 {
        let pts = piecewise_frontier(seed, &edges);
        let b = detect_break(&pts, &edges).unwrap();
        found.push(format!("{:.2e}", b.threshold));
        if (b.threshold.ln() - BREAK_AT.ln()).abs() <= width {
            ok += 1;
        }
    }
    let detail = format!("{ok}/10 within one bin of {BREAK_AT:.1e}; thresholds {}", found.join(" "));
    report(4, "break detection (10 seeds)", ok >= 9, &detail, t);
}

#[test]
fn criterion_05_gradient_correctness() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut tensors = 0;
    for (k, &(e, h, i, l, a, v, s)) in common::MICRO.iter().enumerate() {
        let cfg = ModelConfig::new(e, h, i, l, a, v, s);
        let p = common::perturbed(&cfg, 40 + k as u64);
        let batch = common::random_batch(&cfg, 50 + k as u64, 3);
        let g = grad_mlm(&p, &batch).unwrap();
        let fd = common::finite_difference(&p, |q| mlm_loss(q, &batch, Mode::Eval).unwrap());
        for (tv, f) in g.tensors().iter().zip(&fd) {
            worst = worst.max(common::rel_err(tv.data, f));
            tensors += 1;
        }
    }
    report(5, "analytic vs finite-difference gradients", worst <= 1e-3, &format!("{tensors} tensors, worst rel err {worst:.2e}"), t);
}

#[test]
fn criterion_06_initial_loss() {
    let t = Instant::now();
    let mut ratios = Vec::new();
    for (k, cfg) in [
        ModelConfig::new(32, 32, 128, 2, 2, 600, 32),
        ModelConfig::new(32, 32, 64, 1, 1, V_REF, 32),
        ModelConfig::new(64, 64, 128, 2, 4, 2_000, 48),
    ]
    .iter()
    .enumerate()
    {
        let p = init_model(cfg, k as u64).unwrap();
        let batch = common::random_batch(cfg, 60 + k as u64, 16);
        let loss = mlm_loss(&p, &batch, Mode::Eval).unwrap();
        ratios.push(loss / (cfg.vocab_size as f64).ln());
    }
    let pass = ratios.iter().all(|r| (0.95..=1.1).contains(r));
    report(6, "initial MLM loss / ln V", pass, &format!("ratios {ratios:.4?}"), t);
}

/// Everything criteria 7 and 8 need from one pre-training run.
struct Lab {
    task: FinetuneTask,
    init: ModelParams,
    /// (step, eval perplexity, parameters) at every checkpoint.
    checkpoints: Vec<(u64, f64, ModelParams)>,
}

const PRETRAIN_STEPS: u64 = 2_000;
const CHECKPOINT_EVERY: u64 = 400;

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| {
        let docs = generate_documents(&SynthCorpusConfig { documents: 8_000, seed: 0, ..Default::default() }).unwrap();
        let vocab = VocabularySpec::from_words(lexicon()).unwrap();
        let cfg = FilterConfig { mode: FilterMode::Sentence, target_span_words: 12, ..Default::default() };
        let spans = filter_corpus_parallel(&docs, &vocab, cfg).unwrap();
        let tok = train_bpe(&spans, 600, 0).unwrap();
        let seqs: Vec<Vec<u32>> = spans.iter().map(|s| tok.encode(&s.text)).collect();
        let (eval, train) = seqs.split_at(256);

        let model = ModelConfig::new(32, 32, 128, 2, 2, tok.vocab_size(), 32);
        let init = init_model(&model, 0).unwrap();
        let hyper = OptimizerHyper { total_steps: PRETRAIN_STEPS, batch_size: 16, peak_lr: 1e-3, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let opts = PretrainOptions {
            run_id: "acceptance".into(),
            log_every: CHECKPOINT_EVERY,
            checkpoint: Some(CheckpointPolicy { root: dir.path().to_path_buf(), every: CHECKPOINT_EVERY }),
            ..Default::default()
        };
        let out = pretrain(init.clone(), train, eval, &hyper, &opts).unwrap();
        assert_eq!(out.log.steps_completed, PRETRAIN_STEPS);
        let checkpoints = out
            .log
            .records
            .iter()
            .map(|r| {
                let path = dir.path().join(format!("acceptance/step_{}.ckpt", r.step));
                (r.step, r.eval_ppl, read_checkpoint(&path).unwrap().params)
            })
            .collect();
        let task = animal_task(&tok, &AnimalTaskConfig { seed: 0, ..Default::default() }).unwrap();
        Lab { task, init, checkpoints }
    })
}

fn per_seed_accuracy(params: &ModelParams, task: &FinetuneTask) -> Vec<f64> {
    let opts = FinetuneOptions::default();
    finetune(params, task, &opts).unwrap().per_seed.iter().map(|s| s.best_accuracy).collect()
}

#[test]
fn criterion_07_pretraining_benefit() {
    let t = Instant::now();
    let lab = lab();
    let (_, _, pretrained) = lab.checkpoints.last().unwrap();
    let with = per_seed_accuracy(pretrained, &lab.task);
    let without = per_seed_accuracy(&lab.init, &lab.task);
    let diffs: Vec<f64> = with.iter().zip(&without).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // One-sided paired t-test on the per-seed differences.
    let p = if sd == 0.0 {
        if mean > 0.0 { 0.0 } else { 1.0 }
    } else {
        1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(mean / (sd / n.sqrt()))
    };
    let pass = diffs.iter().all(|&d| d > 0.0) && p < 0.05;
    let detail = format!("pretrained {with:.3?} vs random {without:.3?}, mean gain {mean:.3}, paired one-sided p {p:.4}");
    report(7, "pre-training benefit (3 paired seeds)", pass, &detail, t);
}

#[test]
fn criterion_08_upstream_downstream_correlation() {
    let t = Instant::now();
    // Hand-ranked fixtures.
    let ranks_ok = average_ranks(&[0.5, 0.5, 0.1, 0.9, 0.5]) == vec![3.0, 3.0, 1.0, 5.0, 3.0]
        && average_ranks(&[4.0, 1.0, 3.0, 2.0]) == vec![4.0, 1.0, 3.0, 2.0];
    let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
    let fixture_ok = ranks_ok && (r.rho - 0.8).abs() < 1e-15;

    let lab = lab();
    let mut ppl = Vec::new();
    let mut acc = Vec::new();
    for (_, p, params) in &lab.checkpoints {
        let a = per_seed_accuracy(params, &lab.task);
        ppl.push(*p);
        acc.push(a.iter().sum::<f64>() / a.len() as f64);
    }
    let s = spearman(&ppl, &acc).unwrap();
    let pass = fixture_ok && lab.checkpoints.len() >= 6 && s.rho < 0.0;
    let steps: Vec<u64> = lab.checkpoints.iter().map(|c| c.0).collect();
    let detail = format!(
        "fixtures {}; {} checkpoints {steps:?}, ppl {ppl:.2?}, acc {acc:.3?}, rho {:.3} (p {:.3})",
        if fixture_ok { "exact" } else { "MISMATCH" },
        ppl.len(),
        s.rho,
        s.p_value
    );
    report(8, "perplexity vs task accuracy", pass, &detail, t);
}

/// Tokens per word by encoding each word's chunk on its own.
fn enumerate_split_ratio(tok: &TokenizerModel, texts: &[&str]) -> f64 {
    let (mut words, mut tokens) = (0usize, 0usize);
    for t in texts {
        for (i, w) in t.split(' ').enumerate() {
            let chunk = if i == 0 { w.to_string() } else { format!(" {w}") };
            words += 1;
            tokens += tok.encode(&chunk).len();
        }
    }
    tokens as f64 / words as f64
}

#[test]
fn criterion_09_tokenizer_metrics() {
    let t = Instant::now();
    let texts = [
        "look at the doggy", "the doggy is running", "undo the blocks", "where did the kitty go",
        "you are jumping", "the blocks are red",
    ];
    let spans: Vec<TextSpan> = texts.iter().map(|s| TextSpan::from_text(*s)).collect();
    let tok = train_bpe(&spans, 300, 0).unwrap();
    let split_err = (word_split_ratio(&tok, &spans, 0).unwrap() - enumerate_split_ratio(&tok, &texts)).abs();

    let words = ["doggy", "running", "jumping", "undo", "blocks", "kitty"];
    let splits: HashMap<&str, Vec<String>> = words
        .iter()
        .map(|w| {
            let ids = tok.encode(&format!(" {w}"));
            let pieces: Vec<String> = ids
                .iter()
                .map(|&i| String::from_utf8(tok.token_bytes(i).unwrap().to_vec()).unwrap().trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            (*w, pieces)
        })
        .collect();
    let mut entries: Vec<EsmsEntry> = [
        ("doggy", vec!["dog", "gy"]), ("running", vec!["run", "ning"]), ("jumping", vec!["jump", "ing"]),
        ("undo", vec!["un", "do"]), ("blocks", vec!["block", "s"]), ("kitty", vec!["kit", "ty"]),
    ]
    .into_iter()
    .map(|(w, p)| EsmsEntry { word: w.into(), subtokens: p.into_iter().map(String::from).collect(), canonical: true })
    .collect();
    // Words the tokenizer does split become entries that must count as hits.
    for w in words {
        if splits[w].len() >= 2 {
            entries.push(EsmsEntry { word: w.into(), subtokens: splits[w].clone(), canonical: false });
        }
    }
    let hits = entries.iter().filter(|e| splits[e.word.as_str()] == e.subtokens).count();
    let n_entries = entries.len();
    let reference = EsmsReference::new(entries).unwrap();
    let esms_err = (esms(&tok, &reference).unwrap() - hits as f64 / n_entries as f64).abs();
    let fixture_ok = split_err <= 1e-12 && esms_err <= 1e-12;

    let full = match std::env::var("DOWNSCALE_LAB_FULL_CORPUS") {
        Ok(path) => {
            let file = std::fs::File::open(&path).expect("DOWNSCALE_LAB_FULL_CORPUS must name a spans JSONL file");
            let spans = read_spans_jsonl(std::io::BufReader::new(file)).unwrap();
            let tok = train_bpe(&spans, V_REF, 0).unwrap();
            let total: usize = spans.iter().map(|s| tok.encode(&s.text).len()).sum();
            let mean = total as f64 / spans.len() as f64;
            Some(((mean / 127.0 - 1.0).abs() <= 0.10, mean))
        }
        Err(_) => None,
    };
    let full_ok = full.is_none_or(|(ok, _)| ok);
    let full_detail = match full {
        None => "full-corpus span length SKIP (set DOWNSCALE_LAB_FULL_CORPUS)".to_string(),
        Some((_, mean)) => format!("full-corpus mean span length {mean:.1} tokens vs 127"),
    };
    let detail = format!("split-ratio err {split_err:.1e}, ESMS err {esms_err:.1e} ({hits}/{n_entries} hits); {full_detail}");
    report(9, "tokenizer metrics", fixture_ok && full_ok, &detail, t);
}

#[test]
fn criterion_10_filter_oracle() {
    let t = Instant::now();
    let vocab = VocabularySpec::from_words(common::WORDS.iter().copied()).unwrap();
    let set: HashSet<&str> = common::WORDS.iter().copied().collect();
    let docs = common::fixture(0);
    assert_eq!(docs.len(), 50);
    let mut total = 0;
    let mut identical = true;
    for (size, stride) in [(110, 30), (8, 3)] {
        let cfg = FilterConfig { span_size: size, stride, ..FilterConfig::default() };
        let got = common::jsonl(&filter_corpus_parallel(&docs, &vocab, cfg).unwrap());
        let expected = common::brute_force_windows(&docs, &set, size, stride);
        total += expected.len();
        identical &= got == common::jsonl(&expected);
    }
    report(10, "span filter vs window enumeration (50 docs)", identical, &format!("{total} spans, byte-identical: {identical}"), t);
}
