use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sentence_admissible, word_admissible, Origin, TextSpan, VocabularySpec};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Span,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub span_size: usize,
    pub stride: usize,
    pub target_span_words: usize,
    /// Characters that end a sentence when followed by whitespace or end of text.
    pub sentence_terminators: Vec<char>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::Span,
            span_size: 110,
            stride: 30,
            target_span_words: 110,
            sentence_terminators: vec!['.', '?', '!'],
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.span_size {
            return Err(LabError::invalid(format!(
                "stride must satisfy 0 < stride <= span_size (stride={}, span_size={})",
                self.stride, self.span_size
            )));
        }
        if self.target_span_words == 0 {
            return Err(LabError::invalid("target_span_words must be positive"));
        }
        Ok(())
    }
}

/// A raw input document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub corpus: String,
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(corpus: impl Into<String>, id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            corpus: corpus.into(),
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub documents: usize,
    pub decode_failures: usize,
    pub spans: usize,
}

/// Splits text into sentences at a terminator followed by whitespace or the
/// end of the text. The terminator stays with its sentence; sentences are
/// returned as words joined by single spaces.
pub fn segment_sentences(text: &str, terminators: &[char]) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for word in text.split_whitespace() {
        current.push(word);
        if word.ends_with(|c| terminators.contains(&c)) {
            sentences.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        sentences.push(current.join(" "));
    }
    sentences
}

/// Stateless per-document filter. Shareable across threads.
#[derive(Debug, Clone)]
pub struct SpanFilter<'a> {
    vocab: &'a VocabularySpec,
    cfg: FilterConfig,
}

impl<'a> SpanFilter<'a> {
    pub fn new(vocab: &'a VocabularySpec, cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { vocab, cfg })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn filter_document(&self, doc: &Document) -> Vec<TextSpan> {
        match self.cfg.mode {
            FilterMode::Span => self.span_windows(doc),
            FilterMode::Sentence => self.sentence_spans(doc),
        }
    }

    fn span_windows(&self, doc: &Document) -> Vec<TextSpan> {
        let words: Vec<&str> = doc.text.split_whitespace().collect();
        let size = self.cfg.span_size;
        if words.len() < size {
            return Vec::new();
        }
        // bad[i] = number of inadmissible words among words[..i]
        let mut bad = Vec::with_capacity(words.len() + 1);
        bad.push(0usize);
        for w in &words {
            let last = *bad.last().unwrap();
            bad.push(last + usize::from(!word_admissible(w, self.vocab)));
        }
        (0..=words.len() - size)
            .step_by(self.cfg.stride)
            .filter(|&start| bad[start + size] == bad[start])
            .map(|start| TextSpan {
                text: words[start..start + size].join(" "),
                word_count: size,
                origin: Origin {
                    corpus: doc.corpus.clone(),
                    document: doc.id.clone(),
                    offset: start,
                },
            })
            .collect()
    }

    fn sentence_spans(&self, doc: &Document) -> Vec<TextSpan> {
        let mut spans = Vec::new();
        let mut buf: Vec<String> = Vec::new();
        let mut buf_words = 0usize;
        let mut buf_offset = 0usize;
        let mut offset = 0usize;
        let flush = |buf: &mut Vec<String>, words: &mut usize, at: usize, out: &mut Vec<TextSpan>| {
            if buf.is_empty() {
                return;
            }
            out.push(TextSpan {
                text: buf.join(" "),
                word_count: *words,
                origin: Origin {
                    corpus: doc.corpus.clone(),
                    document: doc.id.clone(),
                    offset: at,
                },
            });
            buf.clear();
            *words = 0;
        };
        for sentence in segment_sentences(&doc.text, &self.cfg.sentence_terminators) {
            let n = sentence.split_whitespace().count();
            if sentence_admissible(&sentence, self.vocab) {
                if !buf.is_empty() && buf_words + n > self.cfg.target_span_words {
                    flush(&mut buf, &mut buf_words, buf_offset, &mut spans);
                }
                if buf.is_empty() {
                    buf_offset = offset;
                }
                buf.push(sentence);
                buf_words += n;
            }
            offset += n;
        }
        flush(&mut buf, &mut buf_words, buf_offset, &mut spans);
        spans
    }
}

/// Lazily filters a document stream; output order follows input order.
pub fn filter_corpus<'a, I>(
    documents: I,
    vocab: &'a VocabularySpec,
    cfg: FilterConfig,
) -> Result<impl Iterator<Item = TextSpan> + 'a>
where
    I: IntoIterator<Item = Document>,
    I::IntoIter: 'a,
{
    let filter = SpanFilter::new(vocab, cfg)?;
    Ok(documents
        .into_iter()
        .flat_map(move |d| filter.filter_document(&d)))
}

/// Filters documents on the rayon pool and merges results in input order, so
/// the output is identical to [`filter_corpus`].
pub fn filter_corpus_parallel(
    documents: &[Document],
    vocab: &VocabularySpec,
    cfg: FilterConfig,
) -> Result<Vec<TextSpan>> {
    let filter = SpanFilter::new(vocab, cfg)?;
    let per_doc: Vec<Vec<TextSpan>> = documents
        .par_iter()
        .map(|d| filter.filter_document(d))
        .collect();
    Ok(per_doc.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Partitions items into train/dev/test. Dev and test members are chosen by
/// a seeded shuffle; every part keeps the original relative order.
pub fn split_dataset<T>(
    items: Vec<T>,
    dev_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<DatasetSplit<T>> {
    let n = items.len();
    if dev_size + test_size > n {
        return Err(LabError::invalid(format!(
            "dev_size + test_size = {} exceeds {} items",
            dev_size + test_size,
            n
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // 0 = train, 1 = dev, 2 = test
    let mut part = vec![0u8; n];
    for &i in &order[..dev_size] {
        part[i] = 1;
    }
    for &i in &order[dev_size..dev_size + test_size] {
        part[i] = 2;
    }
    let mut split = DatasetSplit {
        train: Vec::with_capacity(n - dev_size - test_size),
        dev: Vec::with_capacity(dev_size),
        test: Vec::with_capacity(test_size),
    };
    for (item, p) in items.into_iter().zip(part) {
        match p {
            1 => split.dev.push(item),
            2 => split.test.push(item),
            _ => split.train.push(item),
        }
    }
    Ok(split)
}
