//! Tokenizer quality metrics and the candidate selection rule.
//!
//! The word-split ratio is the mean number of tokens per whitespace word.
//! ESMS is the fraction of reference words whose pieces match a curated
//! morpheme split exactly.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pretokenize, TokenizerModel};
use crate::corpus::TextSpan;
use crate::error::{LabError, Result};

/// Number of spans sampled (without replacement) for the word-split ratio.
pub const WORD_SPLIT_SAMPLE: usize = 5_000;

/// Anything that can split a single whitespace word into pieces.
pub trait SubwordTokenizer {
    /// Number of tokens the word occupies in running text.
    fn word_token_count(&self, word: &str, first_in_text: bool) -> usize;
    /// Pieces of the word with word-boundary markers removed.
    fn word_pieces(&self, word: &str) -> Vec<String>;
}

impl SubwordTokenizer for TokenizerModel {
    fn word_token_count(&self, word: &str, first_in_text: bool) -> usize {
        if first_in_text {
            self.encode_chunk(word.as_bytes()).len()
        } else {
            self.encode_chunk(format!(" {word}").as_bytes()).len()
        }
    }

    fn word_pieces(&self, word: &str) -> Vec<String> {
        let ids = self.encode_chunk(format!(" {word}").as_bytes());
        self.id_strings(&ids)
            .into_iter()
            .map(|s| s.replace(' ', ""))
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// Tokenizer given as a word → pieces table (e.g. produced by an external
/// WordPiece or SentencePiece run). Unknown words fall back to characters.
#[derive(Debug, Clone, Default)]
pub struct PretokenizedTokenizer {
    pub table: HashMap<String, Vec<String>>,
}

impl SubwordTokenizer for PretokenizedTokenizer {
    fn word_token_count(&self, word: &str, _first_in_text: bool) -> usize {
        self.table
            .get(word)
            .map_or_else(|| word.chars().count(), Vec::len)
    }

    fn word_pieces(&self, word: &str) -> Vec<String> {
        self.table
            .get(word)
            .cloned()
            .unwrap_or_else(|| word.chars().map(String::from).collect())
    }
}

fn sample_spans(sample_spans: &[TextSpan], seed: u64) -> Result<Vec<&TextSpan>> {
    if sample_spans.is_empty() {
        return Err(LabError::EmptyInput("word-split ratio sample".into()));
    }
    if sample_spans.len() <= WORD_SPLIT_SAMPLE {
        return Ok(sample_spans.iter().collect());
    }
    let mut idx = sample(
        &mut ChaCha8Rng::seed_from_u64(seed),
        sample_spans.len(),
        WORD_SPLIT_SAMPLE,
    )
    .into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| &sample_spans[i]).collect())
}

/// Word-split ratio of a BPE model, computed on whole encoded spans.
pub fn word_split_ratio(model: &TokenizerModel, spans: &[TextSpan], seed: u64) -> Result<f64> {
    let chosen = sample_spans(spans, seed)?;
    let mut words = 0usize;
    let mut tokens = 0usize;
    for span in chosen {
        for chunk in pretokenize(&span.text) {
            if chunk.trim().is_empty() {
                continue;
            }
            words += 1;
            tokens += model.encode_chunk(chunk.as_bytes()).len();
        }
    }
    if words == 0 {
        return Err(LabError::EmptyInput("sample contains no words".into()));
    }
    Ok(tokens as f64 / words as f64)
}

/// Word-split ratio for any [`SubwordTokenizer`], word by word.
pub fn word_split_ratio_with<T: SubwordTokenizer + ?Sized>(
    tok: &T,
    spans: &[TextSpan],
    seed: u64,
) -> Result<f64> {
    let chosen = sample_spans(spans, seed)?;
    let mut words = 0usize;
    let mut tokens = 0usize;
    for span in chosen {
        for (i, w) in span.text.split_whitespace().enumerate() {
            words += 1;
            tokens += tok.word_token_count(w, i == 0 && !span.text.starts_with(char::is_whitespace));
        }
    }
    if words == 0 {
        return Err(LabError::EmptyInput("sample contains no words".into()));
    }
    Ok(tokens as f64 / words as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EsmsEntry {
    pub word: String,
    pub subtokens: Vec<String>,
    /// False for entries that extend the published list.
    pub canonical: bool,
}

/// Curated morpheme splits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EsmsReference {
    pub entries: Vec<EsmsEntry>,
}

impl EsmsReference {
    pub fn new(entries: Vec<EsmsEntry>) -> Result<Self> {
        for e in &entries {
            if e.subtokens.len() < 2 || e.subtokens.concat() != e.word {
                return Err(LabError::invalid(format!(
                    "reference split {:?} of {:?} must have >= 2 pieces that concatenate to the word",
                    e.subtokens, e.word
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Parses `word<TAB>a,b[,c]<TAB>published|extended`; `#` lines are comments.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 {
                return Err(LabError::Parse {
                    line: i + 1,
                    msg: "expected `word<TAB>sub,tokens`".into(),
                });
            }
            entries.push(EsmsEntry {
                word: cols[0].to_string(),
                subtokens: cols[1].split(',').map(|s| s.trim().to_string()).collect(),
                canonical: cols.get(2).is_none_or(|p| *p != "extended"),
            });
        }
        Self::new(entries)
    }

    pub fn canonical_only(&self) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| e.canonical).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The bundled 127-word list (13 published rows plus extension rows).
pub fn default_esms_reference() -> EsmsReference {
    EsmsReference::parse_tsv(include_str!("../../data/esms_reference.tsv"))
        .expect("bundled ESMS list is valid")
}

/// Exact sub-token matching score in `[0, 1]`.
pub fn esms<T: SubwordTokenizer + ?Sized>(tok: &T, reference: &EsmsReference) -> Result<f64> {
    if reference.is_empty() {
        return Err(LabError::EmptyInput("ESMS reference".into()));
    }
    let hits = reference
        .entries
        .iter()
        .filter(|e| tok.word_pieces(&e.word) == e.subtokens)
        .count();
    Ok(hits as f64 / reference.len() as f64)
}

/// Scored tokenizer candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub family: String,
    pub vocab_size: usize,
    pub word_split_ratio: f64,
    pub esms: f64,
}

const TIE_EPS: f64 = 1e-12;

/// Applies the selection rule and returns the index of the winner.
///
/// Per family, keep the candidate whose ratio is closest to that family's
/// reference ratio (ties: smaller vocabulary). Among family winners pick the
/// highest ESMS (ties: smaller vocabulary).
pub fn select_by_scores(
    candidates: &[CandidateScore],
    reference_ratios: &HashMap<String, f64>,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(LabError::EmptyInput("tokenizer candidates".into()));
    }
    let mut family_best: Vec<(String, usize)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let target = *reference_ratios.get(&c.family).ok_or_else(|| {
            LabError::invalid(format!("no reference ratio for family {:?}", c.family))
        })?;
        let dist = |c: &CandidateScore| (c.word_split_ratio - target).abs();
        match family_best.iter_mut().find(|(f, _)| *f == c.family) {
            None => family_best.push((c.family.clone(), i)),
            Some((_, best)) => {
                let b = &candidates[*best];
                let (dc, db) = (dist(c), dist(b));
                if dc < db - TIE_EPS || ((dc - db).abs() <= TIE_EPS && c.vocab_size < b.vocab_size)
                {
                    *best = i;
                }
            }
        }
    }
    let mut winner = family_best[0].1;
    for &(_, i) in &family_best[1..] {
        let (c, w) = (&candidates[i], &candidates[winner]);
        if c.esms > w.esms + TIE_EPS
            || ((c.esms - w.esms).abs() <= TIE_EPS && c.vocab_size < w.vocab_size)
        {
            winner = i;
        }
    }
    Ok(winner)
}

/// A tokenizer entered into selection.
pub struct TokenizerCandidate<'a> {
    pub tokenizer: &'a (dyn SubwordTokenizer + Sync),
    pub family: String,
    pub vocab_size: usize,
}

/// Scores every candidate on `sample` and `esms_ref`, then applies
/// [`select_by_scores`]. Returns the winner's index and all scores.
pub fn select_tokenizer(
    candidates: &[TokenizerCandidate<'_>],
    reference_ratios: &HashMap<String, f64>,
    esms_ref: &EsmsReference,
    sample: &[TextSpan],
    seed: u64,
) -> Result<(usize, Vec<CandidateScore>)> {
    let scores = candidates
        .iter()
        .map(|c| {
            Ok(CandidateScore {
                family: c.family.clone(),
                vocab_size: c.vocab_size,
                word_split_ratio: word_split_ratio_with(c.tokenizer, sample, seed)?,
                esms: esms(c.tokenizer, esms_ref)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let winner = select_by_scores(&scores, reference_ratios)?;
    Ok((winner, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{TokenId, BASE_VOCAB, BYTE_OFFSET};

    fn score(family: &str, vocab: usize, ratio: f64, esms: f64) -> CandidateScore {
        CandidateScore {
            family: family.into(),
            vocab_size: vocab,
            word_split_ratio: ratio,
            esms,
        }
    }

    /// Builds merges that turn each given piece (with optional leading space)
    /// into a single token.
    fn model_with_pieces(pieces: &[&str]) -> TokenizerModel {
        let mut merges: Vec<(TokenId, TokenId)> = Vec::new();
        let mut known: HashMap<Vec<u8>, TokenId> = (0..=255u8)
            .map(|b| (vec![b], BYTE_OFFSET + b as TokenId))
            .collect();
        for p in pieces {
            let bytes = p.as_bytes();
            let mut acc = vec![bytes[0]];
            for &b in &bytes[1..] {
                let left = known[&acc];
                acc.push(b);
                if !known.contains_key(&acc) {
                    merges.push((left, BYTE_OFFSET + b as TokenId));
                    known.insert(acc.clone(), (BASE_VOCAB + merges.len() - 1) as TokenId);
                }
            }
        }
        TokenizerModel::from_merges("bpe", merges).unwrap()
    }

    #[test]
    fn cooking_splits_into_two() {
        let m = model_with_pieces(&[" cook", "ing"]);
        assert_eq!(m.word_pieces("cooking"), vec!["cook", "ing"]);
        assert_eq!(m.word_token_count("cooking", false), 2);
        let r = EsmsReference::parse_tsv("cooking\tcook,ing\n").unwrap();
        assert_eq!(esms(&m, &r).unwrap(), 1.0);
    }

    #[test]
    fn whole_word_tokens_give_zero_esms() {
        let m = model_with_pieces(&[" cooking", " decode"]);
        let r = EsmsReference::parse_tsv("cooking\tcook,ing\ndecode\tde,code\n").unwrap();
        assert_eq!(esms(&m, &r).unwrap(), 0.0);
    }

    #[test]
    fn ratio_is_one_when_every_word_is_a_token() {
        let m = model_with_pieces(&["look", " at", " the", " doggy"]);
        let spans = vec![TextSpan::from_text("look at the doggy")];
        assert_eq!(word_split_ratio(&m, &spans, 0).unwrap(), 1.0);
        assert_eq!(word_split_ratio_with(&m, &spans, 0).unwrap(), 1.0);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let m = TokenizerModel::bytes_only();
        assert!(word_split_ratio(&m, &[], 0).is_err());
        assert!(esms(&m, &EsmsReference::default()).is_err());
    }

    #[test]
    fn reference_rows_must_concatenate() {
        assert!(EsmsReference::parse_tsv("cooking\tcook,in\n").is_err());
        assert!(EsmsReference::parse_tsv("cooking\tcooking\n").is_err());
    }

    #[test]
    fn bundled_list_has_127_words() {
        let r = default_esms_reference();
        assert_eq!(r.len(), 127);
        assert_eq!(r.canonical_only().len(), 13);
        let concentric = r.entries.iter().find(|e| e.word == "concentric").unwrap();
        assert_eq!(concentric.subtokens, vec!["con", "centr", "ic"]);
    }

    #[test]
    fn selection_reproduces_published_table() {
        let cands = vec![
            score("bpe", 18_000, 1.34, 0.2868),
            score("bpe", 19_000, 1.32, 0.2604),
            score("bpe", 20_000, 1.31, 0.2490),
            score("wordpiece", 16_000, 1.17, 0.0339),
            score("wordpiece", 17_000, 1.17, 0.0264),
            score("wordpiece", 18_000, 1.16, 0.0188),
            score("sentencepiece", 9_000, 1.32, 0.0301),
            score("sentencepiece", 10_000, 1.29, 0.0226),
            score("sentencepiece", 11_000, 1.26, 0.0188),
        ];
        let refs: HashMap<String, f64> = [("bpe", 1.32), ("wordpiece", 1.17), ("sentencepiece", 1.29)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let w = select_by_scores(&cands, &refs).unwrap();
        assert_eq!((cands[w].family.as_str(), cands[w].vocab_size), ("bpe", 19_000));
        // Within-family winners: wordpiece tie at 1.17 goes to the smaller vocab.
        let wp: Vec<_> = cands[3..6].to_vec();
        assert_eq!(select_by_scores(&wp, &refs).unwrap(), 0);
        let sp: Vec<_> = cands[6..].to_vec();
        assert_eq!(sp[select_by_scores(&sp, &refs).unwrap()].vocab_size, 10_000);
    }

    #[test]
    fn singleton_and_empty_selection() {
        let refs: HashMap<String, f64> = [("bpe".to_string(), 1.0)].into_iter().collect();
        assert_eq!(select_by_scores(&[score("bpe", 300, 2.0, 0.1)], &refs).unwrap(), 0);
        assert!(select_by_scores(&[], &refs).is_err());
        assert!(select_by_scores(&[score("wp", 300, 2.0, 0.1)], &refs).is_err());
    }
}
