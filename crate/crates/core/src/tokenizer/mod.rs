//! Byte-level BPE tokenizer with a prefix-space word boundary convention.
//!
//! Text is cut into chunks before merging: each word carries the single space
//! that precedes it, and any other whitespace forms chunks of its own. The
//! concatenation of all chunks is the input, so decoding is byte-exact.

mod file;
mod metrics;
mod train;

use std::collections::HashMap;

use crate::error::{LabError, Result};

pub use file::{bytes_to_printable, printable_to_bytes, read_tokenizer, write_tokenizer};
pub use metrics::{
    default_esms_reference, esms, select_by_scores, select_tokenizer, word_split_ratio,
    word_split_ratio_with, CandidateScore, EsmsEntry, EsmsReference, PretokenizedTokenizer,
    SubwordTokenizer, TokenizerCandidate, WORD_SPLIT_SAMPLE,
};
pub use train::{train_bpe, BpeTrainer};

pub type TokenId = u32;

/// Ids of the reserved tokens. They occupy the first ids of every model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub bos: TokenId,
    pub pad: TokenId,
    pub eos: TokenId,
    pub unk: TokenId,
    pub mask: TokenId,
}

pub const SPECIALS: SpecialTokens = SpecialTokens {
    bos: 0,
    pad: 1,
    eos: 2,
    unk: 3,
    mask: 4,
};

pub(crate) const SPECIAL_NAMES: [&str; 5] = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"];
pub const NUM_SPECIALS: usize = SPECIAL_NAMES.len();
/// Id of byte `0x00`; byte `b` has id `BYTE_OFFSET + b`.
pub const BYTE_OFFSET: TokenId = NUM_SPECIALS as TokenId;
/// Size of a model with no merges.
pub const BASE_VOCAB: usize = NUM_SPECIALS + 256;

impl SpecialTokens {
    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }
}

/// Trained byte-level BPE model.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    family: String,
    merges: Vec<(TokenId, TokenId)>,
    /// Bytes of every non-special token, indexed by `id - BYTE_OFFSET`.
    token_bytes: Vec<Vec<u8>>,
    ranks: HashMap<(TokenId, TokenId), u32>,
}

impl TokenizerModel {
    /// Rebuilds a model from its ordered merge list.
    pub fn from_merges(
        family: impl Into<String>,
        merges: Vec<(TokenId, TokenId)>,
    ) -> Result<Self> {
        let mut token_bytes: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = (BASE_VOCAB + rank) as TokenId;
            let lookup = |id: TokenId| -> Result<&Vec<u8>> {
                if id < BYTE_OFFSET || id >= next {
                    return Err(LabError::Format(format!(
                        "merge {rank} references token {id} which is not defined before it"
                    )));
                }
                Ok(&token_bytes[(id - BYTE_OFFSET) as usize])
            };
            let mut bytes = lookup(a)?.clone();
            bytes.extend_from_slice(lookup(b)?);
            if ranks.insert((a, b), rank as u32).is_some() {
                return Err(LabError::Format(format!("duplicate merge ({a}, {b})")));
            }
            token_bytes.push(bytes);
        }
        Ok(Self {
            family: family.into(),
            merges,
            token_bytes,
            ranks,
        })
    }

    /// A model with no merges (pure byte fallback).
    pub fn bytes_only() -> Self {
        Self::from_merges("bpe", Vec::new()).expect("empty merge list is valid")
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn specials(&self) -> SpecialTokens {
        SPECIALS
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIALS + self.token_bytes.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// Raw bytes of a token; special tokens yield their display name.
    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        if (id as usize) < NUM_SPECIALS {
            return Some(SPECIAL_NAMES[id as usize].as_bytes());
        }
        self.token_bytes
            .get((id - BYTE_OFFSET) as usize)
            .map(Vec::as_slice)
    }

    /// Token string map (printable form for byte tokens, names for specials).
    pub fn token_vocab(&self) -> HashMap<String, TokenId> {
        let mut map: HashMap<String, TokenId> = SPECIAL_NAMES
            .iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), i as TokenId))
            .collect();
        for (i, bytes) in self.token_bytes.iter().enumerate() {
            map.insert(bytes_to_printable(bytes), i as TokenId + BYTE_OFFSET);
        }
        map
    }

    /// Rank of a merge, if the pair is a learned merge.
    pub fn merge_rank(&self, a: TokenId, b: TokenId) -> Option<u32> {
        self.ranks.get(&(a, b)).copied()
    }

    /// Encodes one pre-tokenized chunk by repeatedly merging the lowest-rank pair.
    pub fn encode_chunk(&self, chunk: &[u8]) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = chunk.iter().map(|&b| BYTE_OFFSET + b as TokenId).collect();
        while ids.len() > 1 {
            let best = ids
                .windows(2)
                .filter_map(|w| self.merge_rank(w[0], w[1]))
                .min();
            let Some(rank) = best else { break };
            let (a, b) = self.merges[rank as usize];
            let merged = (BASE_VOCAB as u32 + rank) as TokenId;
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == a && ids[i + 1] == b {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            ids = out;
        }
        ids
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        pretokenize(text)
            .into_iter()
            .flat_map(|c| self.encode_chunk(c.as_bytes()))
            .collect()
    }

    /// Concatenated bytes of the ids; special tokens are skipped.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            if SPECIALS.is_special(id) {
                continue;
            }
            let bytes = self
                .token_bytes(id)
                .ok_or_else(|| LabError::invalid(format!("token id {id} out of range")))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?)
            .map_err(|e| LabError::invalid(format!("decoded bytes are not UTF-8: {e}")))
    }

    /// Token strings for the ids (lossy UTF-8 per token).
    pub fn id_strings(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| {
                self.token_bytes(id)
                    .map(|b| String::from_utf8_lossy(b).into_owned())
                    .unwrap_or_default()
            })
            .collect()
    }
}

/// Cuts text into merge chunks. A word is a maximal run of non-whitespace
/// plus the single space directly before it; remaining whitespace runs are
/// chunks of their own. Concatenating the chunks reproduces `text`.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let ws_len = rest
            .char_indices()
            .find(|(_, c)| !c.is_whitespace())
            .map_or(rest.len(), |(i, _)| i);
        if ws_len == 0 {
            let word_len = rest
                .char_indices()
                .find(|(_, c)| c.is_whitespace())
                .map_or(rest.len(), |(i, _)| i);
            chunks.push(&rest[..word_len]);
            rest = &rest[word_len..];
            continue;
        }
        let followed_by_word = ws_len < rest.len();
        if followed_by_word && rest.as_bytes()[ws_len - 1] == b' ' {
            if ws_len > 1 {
                chunks.push(&rest[..ws_len - 1]);
            }
            let after = &rest[ws_len..];
            let word_len = after
                .char_indices()
                .find(|(_, c)| c.is_whitespace())
                .map_or(after.len(), |(i, _)| i);
            chunks.push(&rest[ws_len - 1..ws_len + word_len]);
            rest = &after[word_len..];
        } else {
            chunks.push(&rest[..ws_len]);
            rest = &rest[ws_len..];
        }
    }
    chunks
}
