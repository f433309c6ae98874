//! Parameter counting and per-sequence FLOPs accounting for the encoder.

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;

/// Learned absolute position slots; counted in the parameter total.
pub const POSITION_SLOTS: usize = 512;

/// How the feed-forward cost is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopsMode {
    /// `2(HI + IH)` per layer, as the formula is usually written (no sequence factor).
    Verbatim,
    /// `2S(HI + IH)` per layer.
    #[default]
    SCorrected,
}

/// Every term of the per-sequence cost, for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub mode: FlopsMode,
    pub seq_len: u64,
    pub c_emb: f64,
    /// Attention cost of a single layer.
    pub c_att: f64,
    pub c_att_qkv: f64,
    pub c_att_scores: f64,
    pub c_att_softmax: f64,
    pub c_att_reduce: f64,
    pub c_att_out: f64,
    /// Feed-forward cost of a single layer.
    pub c_int: f64,
    pub c_lmh: f64,
    pub c_forward: f64,
    pub c_backward: f64,
    pub c_seq: f64,
}

/// Trainable parameters, including token and position embeddings and the
/// untied MLM decoder.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let (v, e, h, i, l) = (
        cfg.vocab_size as u64,
        cfg.embedding_size as u64,
        cfg.hidden_size as u64,
        cfg.intermediate_size as u64,
        cfg.num_layers as u64,
    );
    let embeddings = v * e + POSITION_SLOTS as u64 * e + 2 * e;
    let projection = e * h + h + 2 * h;
    let attention = 4 * (h * h + h) + 2 * h;
    let ffn = h * i + i + i * h + h + 2 * h;
    let head = h * h + h + 2 * h;
    let decoder = h * v + v;
    embeddings + projection + l * (attention + ffn) + head + decoder
}

/// Per-sequence FLOPs at the config's sequence length.
pub fn flops_per_sequence(cfg: &ModelConfig, mode: FlopsMode) -> CostBreakdown {
    flops_per_sequence_at(cfg, cfg.max_seq_len, mode)
}

pub fn flops_per_sequence_at(cfg: &ModelConfig, seq_len: usize, mode: FlopsMode) -> CostBreakdown {
    let s = seq_len as f64;
    let v = cfg.vocab_size as f64;
    let e = cfg.embedding_size as f64;
    let h = cfg.hidden_size as f64;
    let i = cfg.intermediate_size as f64;
    let a = cfg.num_heads as f64;
    let k = (cfg.hidden_size / cfg.num_heads) as f64;
    let l = cfg.num_layers as f64;

    let c_emb = 2.0 * s * (v * e + e * h);
    let c_att_qkv = 2.0 * 3.0 * s * h * (k * a);
    let c_att_scores = 2.0 * s * s * (k * a);
    let c_att_softmax = 3.0 * s * s * a;
    let c_att_reduce = 2.0 * s * s * (k * a);
    let c_att_out = 2.0 * s * h * (k * a);
    let c_att = c_att_qkv + c_att_scores + c_att_softmax + c_att_reduce + c_att_out;
    let c_int = match mode {
        FlopsMode::Verbatim => 2.0 * (h * i + i * h),
        FlopsMode::SCorrected => 2.0 * s * (h * i + i * h),
    };
    let c_lmh = 2.0 * s * h * v;
    let c_forward = c_emb + c_lmh + l * (c_att + c_int);
    let c_backward = 2.0 * c_forward;
    CostBreakdown {
        mode,
        seq_len: seq_len as u64,
        c_emb,
        c_att,
        c_att_qkv,
        c_att_scores,
        c_att_softmax,
        c_att_reduce,
        c_att_out,
        c_int,
        c_lmh,
        c_forward,
        c_backward,
        c_seq: c_forward + c_backward,
    }
}

/// `updates · batch · c_seq`.
pub fn total_flops(c_seq: f64, updates: u64, batch: u64) -> f64 {
    updates as f64 * batch as f64 * c_seq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(e: usize, h: usize, i: usize, l: usize, a: usize) -> ModelConfig {
        ModelConfig::new(e, h, i, l, a, 19_000, 128)
    }

    #[test]
    fn embedding_cost_by_hand() {
        let c = ModelConfig::new(3, 4, 8, 1, 1, 2, 1);
        let b = flops_per_sequence(&c, FlopsMode::SCorrected);
        assert_eq!(b.c_emb, 36.0);
    }

    #[test]
    fn breakdown_invariants() {
        let b = flops_per_sequence(&cfg(256, 256, 1024, 8, 8), FlopsMode::SCorrected);
        assert_eq!(b.c_backward, 2.0 * b.c_forward);
        assert_eq!(b.c_seq, b.c_forward + b.c_backward);
        assert!(b.c_emb > 0.0 && b.c_att > 0.0 && b.c_int > 0.0 && b.c_lmh > 0.0);
    }

    #[test]
    fn total_flops_arithmetic() {
        assert_eq!(total_flops(0.0, 123, 7), 0.0);
        assert_eq!(total_flops(10.0, 3, 2), 60.0);
    }

    #[test]
    fn heads_only_move_the_softmax_term() {
        let b1 = flops_per_sequence(&cfg(256, 256, 1024, 8, 1), FlopsMode::SCorrected);
        let b8 = flops_per_sequence(&cfg(256, 256, 1024, 8, 8), FlopsMode::SCorrected);
        assert_eq!(b1.c_int, b8.c_int);
        assert_eq!(b1.c_att_qkv, b8.c_att_qkv);
        assert_eq!(b1.c_att_scores, b8.c_att_scores);
        assert_eq!(b1.c_att_reduce, b8.c_att_reduce);
        assert_eq!(b1.c_att_out, b8.c_att_out);
        assert_eq!(b8.c_att_softmax - b1.c_att_softmax, 3.0 * 128.0 * 128.0 * 7.0);
        assert_eq!(count_params(&cfg(256, 256, 1024, 8, 1)), count_params(&cfg(256, 256, 1024, 8, 8)));
    }

    #[test]
    fn ffn_term_sequence_dependence() {
        let c = cfg(32, 32, 128, 2, 2);
        let v64 = flops_per_sequence_at(&c, 64, FlopsMode::Verbatim).c_int;
        let v128 = flops_per_sequence_at(&c, 128, FlopsMode::Verbatim).c_int;
        assert_eq!(v64, v128);
        let s64 = flops_per_sequence_at(&c, 64, FlopsMode::SCorrected).c_int;
        let s128 = flops_per_sequence_at(&c, 128, FlopsMode::SCorrected).c_int;
        assert_eq!(2.0 * s64, s128);
        assert_eq!(s64, 64.0 * v64);
    }
}
