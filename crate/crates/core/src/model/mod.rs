//! Tiny transformer encoder trained with masked language modeling.
//!
//! Layout: token + learned position embeddings, layer norm, a linear
//! embedding→hidden projection with its own layer norm, `L` post-LN encoder
//! blocks (multi-head self-attention and a GELU feed-forward), and an MLM
//! head (dense + GELU + layer norm + untied decoder). Every operation has a
//! hand-written backward pass.

mod checkpoint;
mod classifier;
mod encoder;
mod masking;
mod mlm;
pub mod ops;
mod params;

use serde::{Deserialize, Serialize};

use crate::costmodel::POSITION_SLOTS;
use crate::error::{LabError, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use classifier::{
    classifier_loss_and_grad, forward_classifier, predict_classes, ClassificationExample,
    ClassifierHead,
};
pub use encoder::Mode;
pub use masking::{
    apply_masking, build_sequence, build_pair_sequence, mask_batch, MaskedBatch, MaskedSequence,
    IGNORE_INDEX,
};
pub use mlm::{forward_mlm, grad_mlm, mlm_loss, mlm_loss_and_grad, perplexity, MlmOutput};
pub use params::{init_model, LayerParams, ModelParams, ParamKind, TensorView};

/// Encoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    /// Training sequence length; must fit in the position table.
    pub max_seq_len: usize,
    /// Dropout rate in per-mille, kept integral so configs hash and compare exactly.
    #[serde(default = "default_dropout_permille")]
    pub dropout_permille: u32,
}

fn default_dropout_permille() -> u32 {
    100
}

impl ModelConfig {
    /// Config with the default 10% dropout.
    pub fn new(
        embedding_size: usize,
        hidden_size: usize,
        intermediate_size: usize,
        num_layers: usize,
        num_heads: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        Self {
            embedding_size,
            hidden_size,
            intermediate_size,
            num_layers,
            num_heads,
            vocab_size,
            max_seq_len,
            dropout_permille: default_dropout_permille(),
        }
    }

    /// The (E, H, I, L, A) shape tuple.
    pub fn shape(&self) -> (usize, usize, usize, usize, usize) {
        (
            self.embedding_size,
            self.hidden_size,
            self.intermediate_size,
            self.num_layers,
            self.num_heads,
        )
    }

    pub fn key_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn dropout(&self) -> f64 {
        f64::from(self.dropout_permille) / 1000.0
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_permille = (rate * 1000.0).round() as u32;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(LabError::InvalidConfig(format!("{name} must be >= 1")));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(LabError::InvalidConfig(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.max_seq_len > POSITION_SLOTS {
            return Err(LabError::InvalidConfig(format!(
                "max_seq_len {} exceeds the {POSITION_SLOTS} position slots",
                self.max_seq_len
            )));
        }
        if self.dropout_permille >= 1000 {
            return Err(LabError::InvalidConfig("dropout must be < 1".into()));
        }
        Ok(())
    }
}

impl std::fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (e, h, i, l, a) = self.shape();
        write!(f, "({e}, {h}, {i}, {l}, {a})")
    }
}
