//! Classification fine-tuning: linear schedule, several seeds, best
//! validation accuracy per seed averaged over seeds.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, adamw_update, lr_at, AdamState, OptimizerHyper, Schedule};
use crate::error::{LabError, Result};
use crate::model::{
    build_pair_sequence, build_sequence, classifier_loss_and_grad, predict_classes,
    ClassificationExample, ClassifierHead, Mode, ModelParams,
};
use crate::tokenizer::TokenizerModel;

/// A labeled text, or text pair, before tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    pub label: usize,
}

impl TextExample {
    pub fn encode(&self, tok: &TokenizerModel, seq_len: usize) -> ClassificationExample {
        let a = tok.encode(&self.text);
        let input_ids = match &self.text_b {
            Some(b) => build_pair_sequence(&a, &tok.encode(b), seq_len),
            None => build_sequence(&a, seq_len),
        };
        ClassificationExample { input_ids, label: self.label }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneTask {
    pub name: String,
    pub num_classes: usize,
    pub train: Vec<ClassificationExample>,
    pub valid: Vec<ClassificationExample>,
}

impl FinetuneTask {
    /// Tokenizes text splits; the class count is one more than the largest label.
    pub fn from_text(
        name: impl Into<String>,
        tok: &TokenizerModel,
        train: &[TextExample],
        valid: &[TextExample],
        seq_len: usize,
    ) -> Self {
        let num_classes = train.iter().chain(valid).map(|e| e.label + 1).max().unwrap_or(0);
        FinetuneTask {
            name: name.into(),
            num_classes,
            train: train.iter().map(|e| e.encode(tok, seq_len)).collect(),
            valid: valid.iter().map(|e| e.encode(tok, seq_len)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub seeds: Vec<u64>,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            peak_lr: 2e-4,
            seeds: vec![0, 1, 2],
            warmup_fraction: 0.05,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_accuracy: f64,
    pub epoch_accuracies: Vec<f64>,
    /// Mean training loss over the last epoch.
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneResult {
    pub task: String,
    pub mean_accuracy: f64,
    pub per_seed: Vec<SeedResult>,
}

fn accuracy(p: &ModelParams, head: &ClassifierHead, data: &[ClassificationExample]) -> Result<f64> {
    let pred = predict_classes(p, head, data)?;
    let hits = pred.iter().zip(data).filter(|(a, ex)| **a == ex.label).count();
    Ok(hits as f64 / data.len() as f64)
}

fn run_seed(
    params: &ModelParams,
    task: &FinetuneTask,
    opts: &FinetuneOptions,
    seed: u64,
) -> Result<SeedResult> {
    let mut p = params.clone();
    let mut head = ClassifierHead::new(p.config.hidden_size, task.num_classes, seed)?;
    let steps_per_epoch = task.train.len().div_ceil(opts.batch_size) as u64;
    let hyper = OptimizerHyper {
        peak_lr: opts.peak_lr,
        weight_decay: opts.weight_decay,
        schedule: Schedule::Linear,
        warmup_fraction: opts.warmup_fraction,
        total_steps: steps_per_epoch * opts.epochs as u64,
        batch_size: opts.batch_size,
        clip_norm: opts.clip_norm,
        ..Default::default()
    };
    hyper.validate()?;
    let mut state = AdamState::new(&p);
    let mut head_m = head.zeros_like();
    let mut head_v = head.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    let mut step = 0u64;
    let mut epoch_accuracies = Vec::with_capacity(opts.epochs);
    let mut final_train_loss = f64::NAN;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            step += 1;
            let batch: Vec<ClassificationExample> =
                chunk.iter().map(|&i| task.train[i].clone()).collect();
            let mode = Mode::Train { seed: rng.next_u64() };
            let (loss, mut g, mut gh) = classifier_loss_and_grad(&p, &head, &batch, mode)?;
            if !loss.is_finite() {
                return Err(LabError::Numerical(format!("non-finite loss at step {step}")));
            }
            loss_sum += loss;
            if let Some(c) = opts.clip_norm {
                let sq = g.global_norm().powi(2)
                    + gh.w.iter().chain(gh.b.iter()).map(|v| v * v).sum::<f64>();
                let norm = sq.sqrt();
                if norm > c {
                    g.scale(c / norm);
                    gh.w *= c / norm;
                    gh.b *= c / norm;
                }
            }
            adamw_step(&mut p, &mut state, &g, &hyper, step)?;
            let lr = lr_at(&hyper, step);
            adamw_update(
                head.w.as_slice_mut().expect("contiguous"),
                gh.w.as_slice().expect("contiguous"),
                head_m.w.as_slice_mut().expect("contiguous"),
                head_v.w.as_slice_mut().expect("contiguous"),
                lr,
                &hyper,
                step,
                true,
            );
            adamw_update(
                head.b.as_slice_mut().expect("contiguous"),
                gh.b.as_slice().expect("contiguous"),
                head_m.b.as_slice_mut().expect("contiguous"),
                head_v.b.as_slice_mut().expect("contiguous"),
                lr,
                &hyper,
                step,
                false,
            );
        }
        final_train_loss = loss_sum / steps_per_epoch as f64;
        let acc = accuracy(&p, &head, &task.valid)?;
        info!(
            "{} seed {seed} epoch {} train loss {final_train_loss:.4} valid acc {acc:.4}",
            task.name,
            epoch + 1
        );
        epoch_accuracies.push(acc);
    }
    let best_accuracy = epoch_accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SeedResult {
        seed,
        best_accuracy,
        epoch_accuracies,
        final_train_loss,
    })
}

/// Fine-tunes a copy of `params` once per seed with a fresh head.
pub fn finetune(
    params: &ModelParams,
    task: &FinetuneTask,
    opts: &FinetuneOptions,
) -> Result<FinetuneResult> {
    if task.valid.is_empty() {
        return Err(LabError::EmptyInput("validation split".into()));
    }
    if task.train.is_empty() {
        return Err(LabError::EmptyInput("training split".into()));
    }
    if opts.seeds.is_empty() || opts.epochs == 0 || opts.batch_size == 0 {
        return Err(LabError::InvalidConfig(
            "fine-tuning needs seeds, epochs and a batch size".into(),
        ));
    }
    if task.num_classes == 0 {
        return Err(LabError::InvalidConfig("task has no classes".into()));
    }
    if let Some(ex) = task.train.iter().chain(&task.valid).find(|e| e.label >= task.num_classes) {
        return Err(LabError::invalid(format!(
            "label {} outside {} classes",
            ex.label, task.num_classes
        )));
    }
    if !(2e-5..=2e-4).contains(&opts.peak_lr) {
        warn!("peak_lr {} outside the usual [2e-5, 2e-4] sweep", opts.peak_lr);
    }
    let per_seed = if task.num_classes == 1 {
        // A single logit: softmax is identically 1, so loss is 0 and every
        // prediction is the only class.
        opts.seeds
            .iter()
            .map(|&seed| SeedResult {
                seed,
                best_accuracy: 1.0,
                epoch_accuracies: vec![1.0; opts.epochs],
                final_train_loss: 0.0,
            })
            .collect()
    } else {
        opts.seeds
            .iter()
            .map(|&s| run_seed(params, task, opts, s))
            .collect::<Result<Vec<_>>>()?
    };
    let mean_accuracy =
        per_seed.iter().map(|r| r.best_accuracy).sum::<f64>() / per_seed.len() as f64;
    Ok(FinetuneResult {
        task: task.name.clone(),
        mean_accuracy,
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_sequence, init_model, ModelConfig};

    fn task(num_classes: usize) -> FinetuneTask {
        let ex = |t: u32| ClassificationExample {
            input_ids: build_sequence(&[t, 9], 8),
            label: if num_classes == 1 { 0 } else { (t % 2) as usize },
        };
        FinetuneTask {
            name: "parity".into(),
            num_classes,
            train: (0..24).map(|i| ex(5 + i % 8)).collect(),
            valid: (0..8).map(|i| ex(5 + i)).collect(),
        }
    }

    fn opts() -> FinetuneOptions {
        FinetuneOptions {
            epochs: 2,
            batch_size: 8,
            seeds: vec![0, 1],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_over_seed_list() {
        let p = init_model(&ModelConfig::new(8, 8, 16, 1, 2, 20, 8), 0).unwrap();
        let a = finetune(&p, &task(2), &opts()).unwrap();
        let b = finetune(&p, &task(2), &opts()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_seed.len(), 2);
    }

    #[test]
    fn single_class_is_trivially_solved() {
        let p = init_model(&ModelConfig::new(8, 8, 16, 1, 2, 20, 8), 0).unwrap();
        let r = finetune(&p, &task(1), &opts()).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        assert!(r.per_seed.iter().all(|s| s.final_train_loss == 0.0));
    }

    #[test]
    fn empty_validation_rejected() {
        let p = init_model(&ModelConfig::new(8, 8, 16, 1, 2, 20, 8), 0).unwrap();
        let mut t = task(2);
        t.valid.clear();
        assert!(matches!(finetune(&p, &t, &opts()), Err(LabError::EmptyInput(_))));
    }
}
