//! Reduced-vocabulary corpus construction.
//!
//! A [`VocabularySpec`] is a closed set of lowercase words. Raw documents are
//! filtered against it either as sliding word windows or as sentences that
//! are later packed into spans, so every emitted [`TextSpan`] only contains
//! in-vocabulary words (numbers are ignored).

mod filter;
mod io;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub use filter::{
    filter_corpus, filter_corpus_parallel, segment_sentences, split_dataset, DatasetSplit,
    Document, FilterConfig, FilterMode, FilterStats, SpanFilter,
};
pub use io::{
    read_documents_jsonl, read_spans_jsonl, read_word_list, write_spans_jsonl, write_word_list,
};

/// Closed set of allowed words.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularySpec {
    words: BTreeSet<String>,
    stoplist: BTreeSet<String>,
    pub source_label: String,
}

/// Counters reported by [`build_vocabulary`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VocabularyStats {
    pub lines: usize,
    pub rejected_lines: usize,
    pub stopped_words: usize,
}

fn is_vocab_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == '\'' || c == '-'
}

impl VocabularySpec {
    /// Builds a vocabulary from explicit words, validating the character set.
    pub fn new<I, S>(words: I, stoplist: I, source_label: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let stoplist: BTreeSet<String> = stoplist.into_iter().map(Into::into).collect();
        let mut set = BTreeSet::new();
        for w in words {
            let w: String = w.into();
            if w.is_empty() || !w.chars().all(is_vocab_char) {
                return Err(LabError::invalid(format!(
                    "vocabulary word {w:?} contains characters outside [a-z'-]"
                )));
            }
            if !stoplist.contains(&w) {
                set.insert(w);
            }
        }
        Ok(Self {
            words: set,
            stoplist,
            source_label: source_label.into(),
        })
    }

    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        Self::new(words, Vec::new(), "explicit")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words in lexicographic order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn stoplist(&self) -> impl Iterator<Item = &str> {
        self.stoplist.iter().map(String::as_str)
    }
}

/// Lowercases a raw transcript token and removes every character outside
/// `[a-z'-]`; leading and trailing apostrophes/hyphens are trimmed.
fn clean_transcript_token(token: &str) -> String {
    let kept: String = token
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|&c| is_vocab_char(c))
        .collect();
    kept.trim_matches(|c| c == '\'' || c == '-').to_string()
}

/// Builds a vocabulary from transcript lines.
///
/// Lines that are not valid UTF-8 are rejected and counted. The result does
/// not depend on line order.
pub fn build_vocabulary<I, L>(
    transcript_lines: I,
    stoplist: &BTreeSet<String>,
) -> (VocabularySpec, VocabularyStats)
where
    I: IntoIterator<Item = L>,
    L: AsRef<[u8]>,
{
    let mut stats = VocabularyStats::default();
    let mut words = BTreeSet::new();
    for raw in transcript_lines {
        stats.lines += 1;
        let Ok(line) = std::str::from_utf8(raw.as_ref()) else {
            stats.rejected_lines += 1;
            continue;
        };
        for token in line.split_whitespace() {
            let w = clean_transcript_token(token);
            if w.is_empty() {
                continue;
            }
            if stoplist.contains(&w) {
                stats.stopped_words += 1;
                continue;
            }
            words.insert(w);
        }
    }
    let vocab = VocabularySpec {
        words,
        stoplist: stoplist.clone(),
        source_label: "transcripts".to_string(),
    };
    (vocab, stats)
}

/// Flags words that look like babble: some character bigram occurs at least
/// three times (e.g. "bababa"). Flagged words are only reported, never removed.
pub fn flag_gibberish(vocab: &VocabularySpec) -> Vec<String> {
    vocab
        .words()
        .filter(|w| has_repeated_bigram(w, 3))
        .map(str::to_string)
        .collect()
}

fn has_repeated_bigram(word: &str, min_repeats: usize) -> bool {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 2 {
        return false;
    }
    let mut counts = std::collections::HashMap::new();
    for pair in chars.windows(2) {
        let c = counts.entry((pair[0], pair[1])).or_insert(0usize);
        *c += 1;
        if *c >= min_repeats {
            return true;
        }
    }
    false
}

/// Normalizes one whitespace token for admissibility checks: lowercase,
/// delete numeric characters, strip leading/trailing punctuation. Internal
/// apostrophes and hyphens survive.
pub fn normalize_word(token: &str) -> String {
    let lowered: String = token
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| !c.is_numeric())
        .collect();
    lowered
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

/// Whether a single whitespace token is allowed under `vocab`.
pub fn word_admissible(token: &str, vocab: &VocabularySpec) -> bool {
    let w = normalize_word(token);
    w.is_empty() || vocab.contains(&w)
}

/// True iff every word of the sentence is in the vocabulary after
/// normalization (numbers are ignored).
pub fn sentence_admissible(sentence: &str, vocab: &VocabularySpec) -> bool {
    sentence.split_whitespace().all(|t| word_admissible(t, vocab))
}

/// Where a span came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub corpus: String,
    pub document: String,
    /// Word offset of the span's first word inside the document.
    pub offset: usize,
}

/// A unit of pre-training text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextSpan {
    pub text: String,
    pub word_count: usize,
    pub origin: Origin,
}

impl TextSpan {
    pub fn new(text: impl Into<String>, origin: Origin) -> Self {
        let text = text.into();
        let word_count = text.split_whitespace().count();
        Self {
            text,
            word_count,
            origin,
        }
    }

    /// A span with a synthetic origin, handy for in-memory corpora.
    pub fn from_text(text: impl Into<String>) -> Self {
        Self::new(
            text,
            Origin {
                corpus: "inline".to_string(),
                document: String::new(),
                offset: 0,
            },
        )
    }
}
