//! Helpers shared by the integration test binaries.
#![allow(dead_code)]

use std::collections::HashSet;

use downscale_core::corpus::{write_spans_jsonl, Document, Origin, TextSpan};
use downscale_core::model::{apply_masking, build_sequence, init_model, MaskedBatch, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn perturbed(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = init_model(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += rng.random_range(-0.4..0.4);
        }
    }
    p
}

pub fn random_batch(cfg: &ModelConfig, seed: u64, n: usize) -> MaskedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..n)
        .map(|_| {
            let len = rng.random_range(1..=cfg.max_seq_len - 2);
            let ids: Vec<u32> = (0..len)
                .map(|_| rng.random_range(5..cfg.vocab_size as u32))
                .collect();
            apply_masking(&build_sequence(&ids, cfg.max_seq_len), 0.4, &mut rng).unwrap()
        })
        .collect();
    MaskedBatch { sequences }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    // The key bias has an identically zero gradient (softmax is shift
    // invariant per row); both sides are then pure rounding noise.
    if na + nb < 1e-9 {
        0.0
    } else {
        diff / (na + nb)
    }
}

pub fn finite_difference<F: Fn(&ModelParams) -> f64>(p: &ModelParams, f: F) -> Vec<Vec<f64>> {
    let h = 1e-4;
    let mut q = p.clone();
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.data.len()).collect();
    let mut out = Vec::new();
    for (ti, &size) in sizes.iter().enumerate() {
        let mut g = vec![0.0; size];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = q.tensors()[ti].data[j];
            q.tensors_mut()[ti].data[j] = orig + h;
            let up = f(&q);
            q.tensors_mut()[ti].data[j] = orig - h;
            let down = f(&q);
            q.tensors_mut()[ti].data[j] = orig;
            *gj = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

pub const MICRO: [(usize, usize, usize, usize, usize, usize, usize); 3] = [
    (3, 4, 5, 1, 2, 9, 6),
    (4, 6, 7, 2, 3, 11, 7),
    (5, 4, 3, 2, 1, 8, 5),
];

pub const WORDS: &[&str] = &["look", "at", "the", "doggy", "ball", "you", "see", "it's", "big-ish"];
pub const OOV: &[&str] = &["zeitgeist", "ontology", "fiscal"];
pub const DECOR: &[&str] = &["", ",", ".", "!", "\"", "(", "?"];

/// 50 seeded documents with mixed case, punctuation, numbers and rare OOV words.
pub fn fixture(seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..50)
        .map(|d| {
            let n = rng.random_range(0..260);
            let oov_rate = [0.0, 0.002, 0.01, 0.05][d % 4];
            let words: Vec<String> = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < 0.03 {
                        return rng.random_range(0..100).to_string();
                    }
                    let base = if rng.random::<f64>() < oov_rate {
                        OOV[rng.random_range(0..OOV.len())]
                    } else {
                        WORDS[rng.random_range(0..WORDS.len())]
                    };
                    let mut w = base.to_string();
                    if rng.random::<f64>() < 0.1 {
                        w = w.to_uppercase();
                    }
                    let pre = if rng.random::<f64>() < 0.05 { "\"" } else { "" };
                    format!("{pre}{w}{}", DECOR[rng.random_range(0..DECOR.len())])
                })
                .collect();
            let sep = if d % 3 == 0 { " \n " } else { " " };
            Document::new("fixture", format!("d{d}"), words.join(sep))
        })
        .collect()
}

pub fn admissible(token: &str, vocab: &HashSet<&str>) -> bool {
    let lower = token.to_lowercase();
    let no_digits: String = lower.chars().filter(|c| !c.is_ascii_digit()).collect();
    let core = no_digits.trim_matches(|c: char| !c.is_alphanumeric());
    core.is_empty() || vocab.contains(core)
}

/// Every window start, checked word by word.
pub fn brute_force_windows(docs: &[Document], vocab: &HashSet<&str>, size: usize, stride: usize) -> Vec<TextSpan> {
    let mut out = Vec::new();
    for doc in docs {
        let words: Vec<&str> = doc.text.split_whitespace().collect();
        for start in 0..words.len() {
            if start % stride != 0 || start + size > words.len() {
                continue;
            }
            let window = &words[start..start + size];
            if window.iter().all(|w| admissible(w, vocab)) {
                out.push(TextSpan {
                    text: window.join(" "),
                    word_count: size,
                    origin: Origin {
                        corpus: doc.corpus.clone(),
                        document: doc.id.clone(),
                        offset: start,
                    },
                });
            }
        }
    }
    out
}

pub fn jsonl(spans: &[TextSpan]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_spans_jsonl(&mut buf, spans).unwrap();
    buf
}

