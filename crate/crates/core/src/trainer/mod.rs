//! Optimization: learning-rate schedules, AdamW, pre-training and
//! fine-tuning loops.

mod finetune;
mod pretrain;
mod runlog;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::ModelParams;

pub use finetune::{
    finetune, FinetuneOptions, FinetuneResult, FinetuneTask, SeedResult, TextExample,
};
pub use pretrain::{
    masked_eval_set, pretrain, unigram_baseline_perplexity, CheckpointPolicy, PretrainOptions, PretrainOutcome,
};
pub use runlog::{RunLog, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warmup to the peak, then `peak · sqrt(W / step)`.
    InverseSqrt,
    /// Linear warmup to the peak, then linear decay to zero at the last step.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub warmup_fraction: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
            schedule: Schedule::InverseSqrt,
            warmup_fraction: 0.05,
            total_steps: 1000,
            batch_size: 32,
            clip_norm: Some(1.0),
        }
    }
}

impl OptimizerHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::InvalidConfig(m.to_string()));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("eps must be positive and weight_decay non-negative");
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("total_steps and batch_size must be positive");
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    /// `W = ⌈warmup_fraction · total_steps⌉`.
    pub fn warmup_steps(&self) -> u64 {
        ((self.warmup_fraction * self.total_steps as f64) - 1e-9).ceil().max(1.0) as u64
    }
}

/// Learning rate for update number `step` (1-based; step 0 gives 0).
pub fn lr_at(hyper: &OptimizerHyper, step: u64) -> f64 {
    let total = hyper.total_steps;
    let step = if step > total {
        warn!("step {step} beyond total_steps {total}; clamped");
        total
    } else {
        step
    };
    let w = hyper.warmup_steps();
    let peak = hyper.peak_lr;
    if step <= w {
        return peak * step as f64 / w as f64;
    }
    match hyper.schedule {
        Schedule::InverseSqrt => peak * (w as f64 / step as f64).sqrt(),
        Schedule::Linear => peak * (total - step) as f64 / (total - w) as f64,
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: ModelParams::zeros(&params.config),
            v: ModelParams::zeros(&params.config),
        }
    }
}

/// One AdamW update of a flat tensor. `step` is 1-based.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    hyper: &OptimizerHyper,
    step: u64,
    decay: bool,
) {
    let bc1 = 1.0 - hyper.beta1.powf(step as f64);
    let bc2 = 1.0 - hyper.beta2.powf(step as f64);
    let shrink = if decay { 1.0 - lr * hyper.weight_decay } else { 1.0 };
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p = *p * shrink - lr * mhat / (vhat.sqrt() + hyper.eps);
    }
}

/// AdamW over every tensor; layer norms, biases and embeddings are not decayed.
pub fn adamw_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    grads: &ModelParams,
    hyper: &OptimizerHyper,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(LabError::invalid("optimizer steps are 1-based"));
    }
    if let Some(t) = grads.tensors().iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(LabError::Numerical(format!(
            "non-finite gradient in {} at step {step}",
            t.name
        )));
    }
    let lr = lr_at(hyper, step);
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        adamw_update(p.data, g.data, m.data, v.data, lr, hyper, step, p.kind.decays());
    }
    Ok(())
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
