//! Single-epoch MLM pre-training loop.

use std::collections::HashMap;
use std::path::PathBuf;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runlog::{RunLog, RunRecord};
use super::{adamw_step, clip_grad_norm, AdamState, OptimizerHyper};
use crate::costmodel::{flops_per_sequence, total_flops, FlopsMode};
use crate::error::{LabError, Result};
use crate::model::{
    apply_masking, build_sequence, mlm_loss, mlm_loss_and_grad, perplexity, write_checkpoint,
    Checkpoint, MaskedBatch, Mode, ModelParams, IGNORE_INDEX,
};
use crate::tokenizer::TokenId;

/// Where and how often to persist parameters: `root/run_id/step_N.ckpt`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub root: PathBuf,
    pub every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub run_id: String,
    pub seed: u64,
    pub log_every: u64,
    pub mask_rate: f64,
    pub flops_mode: FlopsMode,
    pub checkpoint: Option<CheckpointPolicy>,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: 0,
            log_every: 100,
            mask_rate: 0.15,
            flops_mode: FlopsMode::SCorrected,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    pub log: RunLog,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn mask_sequences<R: Rng>(
    seqs: &[&Vec<TokenId>],
    seq_len: usize,
    rate: f64,
    rng: &mut R,
) -> Result<MaskedBatch> {
    let sequences = seqs
        .iter()
        .map(|ids| apply_masking(&build_sequence(ids, seq_len), rate, rng))
        .collect::<Result<_>>()?;
    Ok(MaskedBatch { sequences })
}

/// The evaluation set with masks drawn once from the run seed, so every
/// evaluation scores the same positions.
pub fn masked_eval_set(
    eval: &[Vec<TokenId>],
    seq_len: usize,
    rate: f64,
    seed: u64,
) -> Result<MaskedBatch> {
    let refs: Vec<&Vec<TokenId>> = eval.iter().collect();
    mask_sequences(&refs, seq_len, rate, &mut stream(seed, 4))
}

/// Perplexity of the maximum-likelihood unigram distribution of the masked
/// targets, scored on those same targets.
pub fn unigram_baseline_perplexity(batch: &MaskedBatch) -> Result<f64> {
    let mut counts: HashMap<i64, f64> = HashMap::new();
    for s in &batch.sequences {
        for &l in s.labels.iter().filter(|&&l| l != IGNORE_INDEX) {
            *counts.entry(l).or_default() += 1.0;
        }
    }
    let n: f64 = counts.values().sum();
    if n == 0.0 {
        return Err(LabError::Undefined("no masked targets".into()));
    }
    let entropy: f64 = counts.values().map(|&c| -(c / n) * (c / n).ln()).sum();
    Ok(entropy.exp())
}

/// Trains `params` for one pass over `train` (or `hyper.total_steps`
/// updates, whichever is shorter). Sequences are wrapped in `<s> … </s>` and
/// padded or truncated to the model's sequence length.
pub fn pretrain(
    mut params: ModelParams,
    train: &[Vec<TokenId>],
    eval: &[Vec<TokenId>],
    hyper: &OptimizerHyper,
    opts: &PretrainOptions,
) -> Result<PretrainOutcome> {
    hyper.validate()?;
    params.config.validate()?;
    if opts.log_every == 0 {
        return Err(LabError::InvalidConfig("log_every must be positive".into()));
    }
    if eval.is_empty() {
        return Err(LabError::EmptyInput("evaluation set".into()));
    }
    let cfg = params.config;
    let seq_len = cfg.max_seq_len;
    let b = hyper.batch_size;
    let available = (train.len() / b) as u64;
    if available == 0 {
        return Err(LabError::EmptyInput(format!(
            "{} training sequences cannot fill one batch of {b}",
            train.len()
        )));
    }
    let steps = hyper.total_steps.min(available);
    if steps < hyper.total_steps {
        warn!(
            "data exhausted: {} sequences give {steps} of {} updates",
            train.len(),
            hyper.total_steps
        );
    }
    let c_seq = flops_per_sequence(&cfg, opts.flops_mode).c_seq;
    let eval_batch = masked_eval_set(eval, seq_len, opts.mask_rate, opts.seed)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream(opts.seed, 2));
    let mut mask_rng = stream(opts.seed, 1);
    let mut dropout_rng = stream(opts.seed, 3);
    let batch_at = |step: u64| -> Vec<&Vec<TokenId>> {
        let start = (step as usize - 1) * b;
        order[start..start + b].iter().map(|&i| &train[i]).collect()
    };

    let mut log = RunLog {
        run_id: opts.run_id.clone(),
        config: cfg,
        hyper: *hyper,
        seed: opts.seed,
        flops_mode: opts.flops_mode,
        c_seq,
        steps_completed: 0,
        records: Vec::new(),
    };
    let save = |params: &ModelParams, step: u64| -> Result<()> {
        if let Some(policy) = &opts.checkpoint {
            let path = policy.root.join(&opts.run_id).join(format!("step_{step}.ckpt"));
            write_checkpoint(
                &path,
                &Checkpoint {
                    step,
                    tokens_seen: step * (b * seq_len) as u64,
                    params: params.clone(),
                },
            )?;
        }
        Ok(())
    };
    let wants_checkpoint = |step: u64| {
        opts.checkpoint
            .as_ref()
            .is_some_and(|p| p.every > 0 && (step.is_multiple_of(p.every) || step == steps))
    };

    let first = mask_sequences(&batch_at(1), seq_len, opts.mask_rate, &mut mask_rng.clone())?;
    let init_eval = mlm_loss(&params, &eval_batch, Mode::Eval)?;
    log.records.push(RunRecord {
        step: 0,
        tokens_seen: 0,
        flops: 0.0,
        train_loss: mlm_loss(&params, &first, Mode::Eval)?,
        eval_loss: init_eval,
        eval_ppl: perplexity(init_eval),
    });
    if wants_checkpoint(0) {
        save(&params, 0)?;
    }

    let mut state = AdamState::new(&params);
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    for step in 1..=steps {
        let batch = mask_sequences(&batch_at(step), seq_len, opts.mask_rate, &mut mask_rng)?;
        let mode = Mode::Train { seed: dropout_rng.next_u64() };
        let (loss, mut grads) = mlm_loss_and_grad(&params, &batch, mode)?;
        if !loss.is_finite() {
            return Err(LabError::Numerical(format!("non-finite loss at step {step}")));
        }
        if let Some(c) = hyper.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        adamw_step(&mut params, &mut state, &grads, hyper, step)?;
        loss_sum += loss;
        loss_n += 1;

        if step % opts.log_every == 0 || step == steps {
            let eval_loss = mlm_loss(&params, &eval_batch, Mode::Eval)?;
            let rec = RunRecord {
                step,
                tokens_seen: step * (b * seq_len) as u64,
                flops: total_flops(c_seq, step, b as u64),
                train_loss: loss_sum / loss_n as f64,
                eval_loss,
                eval_ppl: perplexity(eval_loss),
            };
            info!(
                "{} step {step}/{steps} train {:.4} eval {:.4} ppl {:.2}",
                opts.run_id, rec.train_loss, rec.eval_loss, rec.eval_ppl
            );
            log.records.push(rec);
            (loss_sum, loss_n) = (0.0, 0);
        }
        if wants_checkpoint(step) {
            save(&params, step)?;
        }
    }
    log.steps_completed = steps;
    Ok(PretrainOutcome { params, log })
}
