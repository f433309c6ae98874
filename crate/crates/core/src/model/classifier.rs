//! Sequence classification on the first-position representation.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{backward_sequence, encode_sequence, sequence_rng, Mode};
use super::mlm::CHUNK;
use super::ops::cross_entropy_row;
use super::params::{truncated_normal, ModelParams};
use crate::error::{LabError, Result};
use crate::tokenizer::{TokenId, SPECIALS};

/// Linear layer from the hidden size to `num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl ClassifierHead {
    pub fn new(hidden_size: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(LabError::invalid("a classifier needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            w: Array2::from_shape_simple_fn((hidden_size, num_classes), || {
                truncated_normal(&mut rng)
            }),
            b: Array1::zeros(num_classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.b.len()
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        self.w.scaled_add(scale, &other.w);
        self.b.scaled_add(scale, &other.b);
    }
}

/// A built input sequence (see `build_sequence` / `build_pair_sequence`)
/// with its class. Padding positions are not attended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationExample {
    pub input_ids: Vec<TokenId>,
    pub label: usize,
}

impl ClassificationExample {
    fn effective_len(&self) -> usize {
        self.input_ids
            .iter()
            .rposition(|&t| t != SPECIALS.pad)
            .map_or(0, |p| p + 1)
    }
}

fn validate(p: &ModelParams, head: &ClassifierHead, batch: &[ClassificationExample]) -> Result<()> {
    let c = head.num_classes();
    if c < 2 {
        return Err(LabError::invalid("a classifier needs at least 2 classes"));
    }
    if head.w.nrows() != p.config.hidden_size {
        return Err(LabError::invalid("classifier head does not match the hidden size"));
    }
    if batch.is_empty() {
        return Err(LabError::EmptyInput("classification batch".into()));
    }
    for ex in batch {
        if ex.label >= c {
            return Err(LabError::invalid(format!(
                "label {} outside {c} classes",
                ex.label
            )));
        }
        if ex.effective_len() == 0 {
            return Err(LabError::invalid("example has no tokens"));
        }
        if ex.input_ids.len() > p.config.max_seq_len {
            return Err(LabError::invalid("example longer than max_seq_len"));
        }
        if ex.input_ids.iter().any(|&t| t as usize >= p.config.vocab_size) {
            return Err(LabError::invalid("token id outside the vocabulary"));
        }
    }
    Ok(())
}

fn example_pass(
    p: &ModelParams,
    head: &ClassifierHead,
    ex: &ClassificationExample,
    index: usize,
    mode: Mode,
    grads: Option<(&mut ModelParams, &mut ClassifierHead, f64)>,
) -> (f64, Array1<f64>) {
    let n = ex.effective_len();
    let ids = &ex.input_ids[..n];
    let key_mask: Vec<bool> = ids.iter().map(|&t| t != SPECIALS.pad).collect();
    let mut rng = sequence_rng(mode, index);
    let cache = encode_sequence(p, ids, &key_mask, &mut rng);
    let pooled = cache.output.row(0).to_owned();
    let logits = pooled.dot(&head.w) + &head.b;
    let (loss, prob) = cross_entropy_row(logits.view(), ex.label);
    if let Some((g, gh, norm)) = grads {
        let mut dlogits = prob;
        dlogits[ex.label] -= 1.0;
        dlogits /= norm;
        let pooled_col = pooled.view().insert_axis(Axis(1));
        let dl_row = dlogits.view().insert_axis(Axis(0));
        ndarray::linalg::general_mat_mul(1.0, &pooled_col, &dl_row, 1.0, &mut gh.w);
        gh.b += &dlogits;
        let mut d_out = Array2::zeros(cache.output.raw_dim());
        d_out.row_mut(0).assign(&head.w.dot(&dlogits));
        backward_sequence(p, &cache, d_out, g);
    }
    (loss, logits)
}

/// Logits (`B × C`) and mean cross-entropy.
pub fn forward_classifier(
    p: &ModelParams,
    head: &ClassifierHead,
    batch: &[ClassificationExample],
    mode: Mode,
) -> Result<(Array2<f64>, f64)> {
    validate(p, head, batch)?;
    let rows: Vec<(f64, Array1<f64>)> = if rayon::current_num_threads() <= 1 {
        batch
            .iter()
            .enumerate()
            .map(|(i, ex)| example_pass(p, head, ex, i, mode, None))
            .collect()
    } else {
        batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| example_pass(p, head, ex, i, mode, None))
            .collect()
    };
    let mut logits = Array2::zeros((batch.len(), head.num_classes()));
    let mut loss = 0.0;
    for (i, (l, row)) in rows.into_iter().enumerate() {
        loss += l;
        logits.row_mut(i).assign(&row);
    }
    Ok((logits, loss / batch.len() as f64))
}

/// Mean loss and gradients for both the encoder and the head.
pub fn classifier_loss_and_grad(
    p: &ModelParams,
    head: &ClassifierHead,
    batch: &[ClassificationExample],
    mode: Mode,
) -> Result<(f64, ModelParams, ClassifierHead)> {
    validate(p, head, batch)?;
    let norm = batch.len() as f64;
    let run = |c: usize, exs: &[ClassificationExample]| {
        let mut g = ModelParams::zeros(&p.config);
        let mut gh = head.zeros_like();
        let mut loss = 0.0;
        for (j, ex) in exs.iter().enumerate() {
            loss += example_pass(p, head, ex, c * CHUNK + j, mode, Some((&mut g, &mut gh, norm))).0;
        }
        (loss, g, gh)
    };
    let parts: Vec<_> = if rayon::current_num_threads() <= 1 {
        batch.chunks(CHUNK).enumerate().map(|(c, e)| run(c, e)).collect()
    } else {
        batch.par_chunks(CHUNK).enumerate().map(|(c, e)| run(c, e)).collect()
    };
    let mut g = ModelParams::zeros(&p.config);
    let mut gh = head.zeros_like();
    let mut loss = 0.0;
    for (l, pg, hg) in parts {
        loss += l;
        g.add_scaled(&pg, 1.0);
        gh.add_scaled(&hg, 1.0);
    }
    Ok((loss / norm, g, gh))
}

/// Argmax class of every example (ties go to the lowest class).
pub fn predict_classes(
    p: &ModelParams,
    head: &ClassifierHead,
    batch: &[ClassificationExample],
) -> Result<Vec<usize>> {
    let (logits, _) = forward_classifier(p, head, batch, Mode::Eval)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_pair_sequence, build_sequence, init_model, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig::new(8, 8, 16, 1, 2, 40, 12)
    }

    #[test]
    fn untrained_head_is_near_chance() {
        let p = init_model(&cfg(), 0).unwrap();
        let head = ClassifierHead::new(8, 2, 1).unwrap();
        let batch: Vec<_> = (0..200)
            .map(|i| ClassificationExample {
                input_ids: build_sequence(&[5 + (i % 30) as u32, 6 + (i % 7) as u32], 12),
                label: (i % 2) as usize,
            })
            .collect();
        let (_, loss) = forward_classifier(&p, &head, &batch, Mode::Eval).unwrap();
        assert!((loss - 2f64.ln()).abs() < 0.05, "loss {loss}");
    }

    #[test]
    fn rejects_out_of_range_label_and_single_class() {
        let p = init_model(&cfg(), 0).unwrap();
        let head = ClassifierHead::new(8, 2, 1).unwrap();
        let bad = vec![ClassificationExample {
            input_ids: build_sequence(&[9], 12),
            label: 2,
        }];
        assert!(forward_classifier(&p, &head, &bad, Mode::Eval).is_err());
        assert!(ClassifierHead::new(8, 1, 0).is_err());
    }

    #[test]
    fn argmax_accuracy_on_forced_head() {
        let p = init_model(&cfg(), 0).unwrap();
        let mut head = ClassifierHead::new(8, 3, 1).unwrap();
        head.w.fill(0.0);
        head.b = ndarray::arr1(&[0.0, 5.0, 1.0]);
        let batch = vec![
            ClassificationExample { input_ids: build_sequence(&[9], 12), label: 1 },
            ClassificationExample { input_ids: build_pair_sequence(&[9, 10], &[11], 12), label: 1 },
        ];
        let pred = predict_classes(&p, &head, &batch).unwrap();
        assert_eq!(pred, vec![1, 1]);
    }

    #[test]
    fn padding_does_not_change_logits() {
        let p = init_model(&cfg(), 2).unwrap();
        let head = ClassifierHead::new(8, 2, 3).unwrap();
        let short = vec![ClassificationExample { input_ids: build_sequence(&[9, 10], 4), label: 0 }];
        let long = vec![ClassificationExample { input_ids: build_sequence(&[9, 10], 12), label: 0 }];
        let (a, _) = forward_classifier(&p, &head, &short, Mode::Eval).unwrap();
        let (b, _) = forward_classifier(&p, &head, &long, Mode::Eval).unwrap();
        assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
    }
}
