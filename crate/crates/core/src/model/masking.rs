//! Sequence assembly and the masking policy: a fixed fraction of non-special
//! tokens is selected and every selected token becomes the mask token.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{LabError, Result};
use crate::tokenizer::{TokenId, SPECIALS};

/// Label value at positions that do not contribute to the loss.
pub const IGNORE_INDEX: i64 = -100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input_ids: Vec<TokenId>,
    /// Original id at masked positions, [`IGNORE_INDEX`] elsewhere.
    pub labels: Vec<i64>,
    /// False at padding positions.
    pub attention_mask: Vec<bool>,
}

impl MaskedSequence {
    pub fn num_labels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_INDEX).count()
    }

    /// Length up to and including the last attended position.
    pub fn effective_len(&self) -> usize {
        self.attention_mask
            .iter()
            .rposition(|&m| m)
            .map_or(0, |p| p + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskedBatch {
    pub sequences: Vec<MaskedSequence>,
}

impl MaskedBatch {
    pub fn num_labels(&self) -> usize {
        self.sequences.iter().map(MaskedSequence::num_labels).sum()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// `<s> ids </s>` truncated/padded to `len`.
pub fn build_sequence(ids: &[TokenId], len: usize) -> Vec<TokenId> {
    assert!(len >= 2, "sequence length must leave room for <s> and </s>");
    let body = &ids[..ids.len().min(len - 2)];
    let mut out = Vec::with_capacity(len);
    out.push(SPECIALS.bos);
    out.extend_from_slice(body);
    out.push(SPECIALS.eos);
    out.resize(len, SPECIALS.pad);
    out
}

/// `<s> a </s> b </s>`, with both halves truncated evenly to fit `len`.
pub fn build_pair_sequence(a: &[TokenId], b: &[TokenId], len: usize) -> Vec<TokenId> {
    assert!(len >= 3, "sequence length must leave room for three specials");
    let budget = len - 3;
    let (mut la, mut lb) = (a.len(), b.len());
    while la + lb > budget {
        if la >= lb {
            la -= 1;
        } else {
            lb -= 1;
        }
    }
    let mut out = Vec::with_capacity(len);
    out.push(SPECIALS.bos);
    out.extend_from_slice(&a[..la]);
    out.push(SPECIALS.eos);
    out.extend_from_slice(&b[..lb]);
    out.push(SPECIALS.eos);
    out.resize(len, SPECIALS.pad);
    out
}

/// Masks `⌈rate · n⌉` of the `n` non-special positions, chosen uniformly
/// without replacement. A sequence with no maskable tokens gets no labels.
pub fn apply_masking<R: Rng + ?Sized>(
    tokens: &[TokenId],
    rate: f64,
    rng: &mut R,
) -> Result<MaskedSequence> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(LabError::invalid(format!("mask rate must be in (0, 1), got {rate}")));
    }
    if tokens.is_empty() {
        return Err(LabError::EmptyInput("sequence to mask".into()));
    }
    let candidates: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| !SPECIALS.is_special(t))
        .map(|(i, _)| i)
        .collect();
    let mut input_ids = tokens.to_vec();
    let mut labels = vec![IGNORE_INDEX; tokens.len()];
    if !candidates.is_empty() {
        // Guard against 0.15 * 100 = 15.000000000000002.
        let k = ((rate * candidates.len() as f64) - 1e-9).ceil() as usize;
        let k = k.clamp(1, candidates.len());
        for j in sample(rng, candidates.len(), k) {
            let pos = candidates[j];
            labels[pos] = i64::from(tokens[pos]);
            input_ids[pos] = SPECIALS.mask;
        }
    }
    let attention_mask = tokens.iter().map(|&t| t != SPECIALS.pad).collect();
    Ok(MaskedSequence {
        input_ids,
        labels,
        attention_mask,
    })
}

pub fn mask_batch<R: Rng + ?Sized>(
    sequences: &[Vec<TokenId>],
    rate: f64,
    rng: &mut R,
) -> Result<MaskedBatch> {
    Ok(MaskedBatch {
        sequences: sequences
            .iter()
            .map(|s| apply_masking(s, rate, rng))
            .collect::<Result<_>>()?,
    })
}
