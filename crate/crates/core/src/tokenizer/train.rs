use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pretokenize, TokenId, TokenizerModel, BASE_VOCAB, BYTE_OFFSET};
use crate::corpus::TextSpan;
use crate::error::{LabError, Result};

/// BPE training options.
#[derive(Debug, Clone)]
pub struct BpeTrainer {
    pub vocab_size: usize,
    pub seed: u64,
    /// Train on a seeded sample of at most this many spans.
    pub max_spans: Option<usize>,
}

impl BpeTrainer {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            seed,
            max_spans: None,
        }
    }

    pub fn train(&self, corpus: &[TextSpan]) -> Result<TokenizerModel> {
        if self.vocab_size <= BASE_VOCAB {
            return Err(LabError::invalid(format!(
                "vocab_size must exceed {BASE_VOCAB} (256 bytes + specials), got {}",
                self.vocab_size
            )));
        }
        let chosen: Vec<&TextSpan> = match self.max_spans {
            Some(k) if k < corpus.len() => {
                let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(self.seed), corpus.len(), k)
                    .into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| &corpus[i]).collect()
            }
            _ => corpus.iter().collect(),
        };
        let mut counts: HashMap<&[u8], u64> = HashMap::new();
        for span in &chosen {
            for chunk in pretokenize(&span.text) {
                *counts.entry(chunk.as_bytes()).or_default() += 1;
            }
        }
        let merges = learn_merges(counts, self.vocab_size - BASE_VOCAB);
        if BASE_VOCAB + merges.len() < self.vocab_size {
            warn!(
                "corpus exhausted after {} merges; vocabulary is {} instead of {}",
                merges.len(),
                BASE_VOCAB + merges.len(),
                self.vocab_size
            );
        }
        TokenizerModel::from_merges("bpe", merges)
    }
}

/// Trains a byte-level BPE model on the spans.
pub fn train_bpe(corpus: &[TextSpan], vocab_size: usize, seed: u64) -> Result<TokenizerModel> {
    BpeTrainer::new(vocab_size, seed).train(corpus)
}

/// Queue key: highest count first, then lexicographically smallest
/// (left bytes, right bytes).
type QueueKey = (Reverse<u64>, Vec<u8>, Vec<u8>);

struct PairTable {
    counts: HashMap<(TokenId, TokenId), u64>,
    queue: BTreeSet<QueueKey>,
    key_to_pair: HashMap<(Vec<u8>, Vec<u8>), (TokenId, TokenId)>,
}

impl PairTable {
    fn adjust(&mut self, pair: (TokenId, TokenId), delta: i64, bytes: &[Vec<u8>]) {
        let old = self.counts.get(&pair).copied().unwrap_or(0);
        let new = (old as i64 + delta) as u64;
        let l = bytes[(pair.0 - BYTE_OFFSET) as usize].clone();
        let r = bytes[(pair.1 - BYTE_OFFSET) as usize].clone();
        if old > 0 {
            self.queue.remove(&(Reverse(old), l.clone(), r.clone()));
        }
        if new > 0 {
            self.counts.insert(pair, new);
            self.queue.insert((Reverse(new), l.clone(), r.clone()));
            self.key_to_pair.insert((l, r), pair);
        } else {
            self.counts.remove(&pair);
        }
    }
}

fn learn_merges(counts: HashMap<&[u8], u64>, max_merges: usize) -> Vec<(TokenId, TokenId)> {
    let mut words: Vec<(Vec<TokenId>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| BYTE_OFFSET + b as TokenId).collect(), c))
        .collect();
    words.sort();
    let mut bytes: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();

    let mut table = PairTable {
        counts: HashMap::new(),
        queue: BTreeSet::new(),
        key_to_pair: HashMap::new(),
    };
    let mut where_: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
    let mut initial: HashMap<(TokenId, TokenId), u64> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            *initial.entry((p[0], p[1])).or_default() += c;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    for (pair, c) in initial {
        table.adjust(pair, c as i64, &bytes);
    }

    let mut merges = Vec::new();
    while merges.len() < max_merges {
        let Some(top) = table.queue.first().cloned() else {
            break;
        };
        let pair = table.key_to_pair[&(top.1.clone(), top.2.clone())];
        let new_id = (BASE_VOCAB + merges.len()) as TokenId;
        merges.push(pair);
        let mut joined = top.1;
        joined.extend(top.2);
        bytes.push(joined);

        let mut affected: Vec<usize> = where_
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for wi in affected {
            let (syms, c) = &words[wi];
            let c = *c as i64;
            let merged = merge_pair(syms, pair, new_id);
            if merged.len() == syms.len() {
                continue;
            }
            for p in syms.windows(2) {
                table.adjust((p[0], p[1]), -c, &bytes);
            }
            for p in merged.windows(2) {
                table.adjust((p[0], p[1]), c, &bytes);
                where_.entry((p[0], p[1])).or_default().insert(wi);
            }
            words[wi].0 = merged;
        }
        where_.remove(&pair);
    }
    merges
}

pub(crate) fn merge_pair(
    syms: &[TokenId],
    pair: (TokenId, TokenId),
    new_id: TokenId,
) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(texts: &[&str]) -> Vec<TextSpan> {
        texts.iter().map(|t| TextSpan::from_text(*t)).collect()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let m = train_bpe(&spans(&["aaaa aaaa"]), BASE_VOCAB + 1, 0).unwrap();
        let a = BYTE_OFFSET + b'a' as TokenId;
        assert_eq!(m.merges(), &[(a, a)]);
        assert_eq!(m.vocab_size(), BASE_VOCAB + 1);
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" both occur once; (a, b) < (c, d).
        let m = train_bpe(&spans(&["ab", "cd"]), BASE_VOCAB + 1, 0).unwrap();
        let id = |c: u8| BYTE_OFFSET + c as TokenId;
        assert_eq!(m.merges(), &[(id(b'a'), id(b'b'))]);
    }

    #[test]
    fn too_small_vocab_is_rejected() {
        assert!(train_bpe(&spans(&["abc"]), BASE_VOCAB, 0).is_err());
    }

    #[test]
    fn exhausted_corpus_stops_early() {
        let m = train_bpe(&spans(&["abc"]), BASE_VOCAB + 50, 0).unwrap();
        assert_eq!(m.merges().len(), 2);
        assert_eq!(m.encode("abc").len(), 1);
    }

    #[test]
    fn subsampling_is_seeded() {
        let corpus = spans(&["the cat", "a dog", "the dog", "a cat", "my hat", "the hat"]);
        let t = BpeTrainer {
            vocab_size: BASE_VOCAB + 10,
            seed: 3,
            max_spans: Some(3),
        };
        assert_eq!(t.train(&corpus).unwrap(), t.train(&corpus).unwrap());
    }
}
