//! Synthetic child-directed text and a matching classification task, used as
//! desk-scale fixtures when the original corpora are unavailable.
//!
//! Nouns come in classes (animals, foods, toys) and each class has its own
//! verbs and frames, so distributional statistics separate the classes. A few
//! neutral frames are shared by every noun; the classification task is
//! phrased in those frames, so only knowledge of the noun itself helps.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{LabError, Result};
use crate::tokenizer::TokenizerModel;
use crate::trainer::{FinetuneTask, TextExample};

pub const ANIMALS: &[&str] = &[
    "dog", "cat", "cow", "pig", "duck", "horse", "sheep", "goat", "frog", "bird", "fish",
    "mouse", "bunny", "bear", "lion", "tiger", "monkey", "puppy", "kitty", "chicken", "owl",
    "fox", "zebra", "giraffe",
];
pub const FOODS: &[&str] = &[
    "apple", "banana", "cookie", "cracker", "cheese", "bread", "soup", "carrot", "cake",
    "grape", "orange", "egg", "juice", "milk", "pizza", "sandwich", "noodle", "berry",
    "muffin", "pear", "yogurt", "toast",
];
pub const TOYS: &[&str] = &[
    "ball", "doll", "truck", "block", "puzzle", "car", "train", "kite", "drum", "robot",
    "crayon", "balloon", "book", "boat", "plane", "teddy", "bucket", "shovel", "whistle",
    "wagon",
];
const PEOPLE: &[&str] = &["mommy", "daddy", "grandma", "grandpa", "baby", "sister", "brother", "you"];
const ADJECTIVES: &[&str] = &[
    "big", "little", "red", "blue", "nice", "funny", "yellow", "green", "silly", "pretty",
];
const PLACES: &[&str] = &["kitchen", "yard", "park", "house", "room", "garden"];
const ANIMAL_VERBS: &[&str] = &["runs", "jumps", "sleeps", "swims", "hops", "barks", "eats", "hides"];
const ANIMAL_SOUNDS: &[&str] = &["woof", "moo", "quack", "meow", "oink", "neigh", "tweet"];
const FOOD_ADJ: &[&str] = &["yummy", "hot", "sweet", "crunchy", "juicy", "warm"];
const TOY_ADJ: &[&str] = &["broken", "fun", "new", "shiny", "loud", "old"];

/// Words that never occur in the lexicon; sprinkled in as filter noise.
pub const NOISE_WORDS: &[&str] = &[
    "mortgage", "quantum", "spreadsheet", "parliament", "algorithm", "bureaucracy",
    "xylophone", "cryptocurrency", "thermodynamics", "subpoena",
];

const NEUTRAL: &[&str] = &[
    "i see the {a} {n}.",
    "look at the {n}!",
    "where is the {n}?",
    "is that a {n}?",
    "here is the {a} {n}.",
];

fn class_frames(class: usize) -> &'static [&'static str] {
    match class {
        0 => &[
            "the {a} {n} {v}.",
            "the {n} says {s}.",
            "{p} pets the {n}.",
            "the {n} eats the {f}.",
            "can you feed the {n}?",
            "the {n} {v} in the {l}.",
            "what does the {n} say?",
        ],
        1 => &[
            "{p} eats the {n}.",
            "the {n} is {fa}.",
            "do you want some {n}?",
            "let us cook the {n}.",
            "we have {n} for lunch.",
            "the {n} is on the plate.",
        ],
        _ => &[
            "{p} plays with the {n}.",
            "the {n} is {ta}.",
            "can you find your {n}?",
            "put the {n} in the box.",
            "let us play with the {a} {n}.",
            "the {n} is in the {l}.",
        ],
    }
}

fn class_nouns(class: usize) -> &'static [&'static str] {
    match class {
        0 => ANIMALS,
        1 => FOODS,
        _ => TOYS,
    }
}

fn fill<R: Rng>(frame: &str, noun: &str, rng: &mut R) -> String {
    let mut out = frame.replace("{n}", noun);
    for (key, list) in [
        ("{a}", ADJECTIVES),
        ("{v}", ANIMAL_VERBS),
        ("{s}", ANIMAL_SOUNDS),
        ("{p}", PEOPLE),
        ("{f}", FOODS),
        ("{l}", PLACES),
        ("{fa}", FOOD_ADJ),
        ("{ta}", TOY_ADJ),
    ] {
        while let Some(pos) = out.find(key) {
            let w = list.choose(rng).expect("non-empty list");
            out.replace_range(pos..pos + key.len(), w);
        }
    }
    out
}

/// Every word the generator can produce apart from [`NOISE_WORDS`].
pub fn lexicon() -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for list in [
        ANIMALS, FOODS, TOYS, PEOPLE, ADJECTIVES, PLACES, ANIMAL_VERBS, ANIMAL_SOUNDS, FOOD_ADJ,
        TOY_ADJ,
    ] {
        words.extend(list.iter().map(|w| w.to_string()));
    }
    for frame in NEUTRAL.iter().chain((0..3).flat_map(class_frames)) {
        for tok in frame.split_whitespace() {
            let w = crate::corpus::normalize_word(tok);
            if !w.is_empty() && !w.starts_with('{') && !tok.contains('{') {
                words.insert(w);
            }
        }
    }
    words
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a sentence gets one out-of-lexicon word.
    pub noise_rate: f64,
    /// Probability that a sentence uses a neutral frame.
    pub neutral_rate: f64,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            documents: 1000,
            min_sentences: 4,
            max_sentences: 16,
            noise_rate: 0.1,
            neutral_rate: 0.2,
            seed: 0,
        }
    }
}

pub fn generate_sentence<R: Rng>(cfg: &SynthCorpusConfig, rng: &mut R) -> String {
    let class = rng.random_range(0..3);
    let noun = class_nouns(class).choose(rng).expect("non-empty");
    let frame = if rng.random_bool(cfg.neutral_rate) {
        NEUTRAL.choose(rng)
    } else {
        class_frames(class).choose(rng)
    }
    .expect("non-empty");
    let sentence = fill(frame, noun, rng);
    if rng.random_bool(cfg.noise_rate) {
        let mut words: Vec<&str> = sentence.split_whitespace().collect();
        let at = rng.random_range(0..words.len());
        words.insert(at, NOISE_WORDS.choose(rng).expect("non-empty"));
        words.join(" ")
    } else {
        sentence
    }
}

pub fn generate_documents(cfg: &SynthCorpusConfig) -> Result<Vec<Document>> {
    if cfg.min_sentences == 0 || cfg.max_sentences < cfg.min_sentences {
        return Err(LabError::InvalidConfig("need 1 <= min_sentences <= max_sentences".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise_rate) || !(0.0..=1.0).contains(&cfg.neutral_rate) {
        return Err(LabError::InvalidConfig("rates must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.documents)
        .map(|d| {
            let n = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
            let text: Vec<String> = (0..n).map(|_| generate_sentence(cfg, &mut rng)).collect();
            Document::new("synth", format!("doc{d}"), text.join(" "))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimalTaskConfig {
    pub train_examples: usize,
    pub valid_examples: usize,
    /// Share of each class's nouns reserved for validation.
    pub heldout_fraction: f64,
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for AnimalTaskConfig {
    fn default() -> Self {
        Self {
            train_examples: 256,
            valid_examples: 256,
            heldout_fraction: 0.5,
            seq_len: 16,
            seed: 0,
        }
    }
}

/// "Is the noun an animal?" over neutral frames. Validation nouns are
/// disjoint from training nouns, so the task measures what the encoder
/// already knows about words it was never fine-tuned on. Classes are
/// balanced: half animals, half foods or toys.
pub fn animal_task_examples(cfg: &AnimalTaskConfig) -> Result<(Vec<TextExample>, Vec<TextExample>)> {
    if !(cfg.heldout_fraction > 0.0 && cfg.heldout_fraction < 1.0) {
        return Err(LabError::InvalidConfig("heldout_fraction must be in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = |list: &[&'static str], rng: &mut ChaCha8Rng| {
        let mut v = list.to_vec();
        v.shuffle(rng);
        let k = ((v.len() as f64) * cfg.heldout_fraction).round() as usize;
        let held = v.split_off(v.len() - k.clamp(1, v.len() - 1));
        (v, held)
    };
    let (animals_tr, animals_va) = split(ANIMALS, &mut rng);
    let others: Vec<&str> = FOODS.iter().chain(TOYS).copied().collect();
    let (others_tr, others_va) = split(&others, &mut rng);
    let mut make = |n: usize, animals: &[&str], others: &[&str]| -> Vec<TextExample> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let noun = if label == 1 { animals } else { others }
                    .choose(&mut rng)
                    .expect("non-empty");
                let frame = NEUTRAL.choose(&mut rng).expect("non-empty");
                TextExample {
                    text: fill(frame, noun, &mut rng),
                    text_b: None,
                    label,
                }
            })
            .collect()
    };
    let train = make(cfg.train_examples, &animals_tr, &others_tr);
    let valid = make(cfg.valid_examples, &animals_va, &others_va);
    Ok((train, valid))
}

/// [`animal_task_examples`] tokenized with `tok`.
pub fn animal_task(tok: &TokenizerModel, cfg: &AnimalTaskConfig) -> Result<FinetuneTask> {
    let (train, valid) = animal_task_examples(cfg)?;
    let mut task = FinetuneTask::from_text("animal", tok, &train, &valid, cfg.seq_len);
    task.num_classes = 2;
    Ok(task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{sentence_admissible, VocabularySpec};
    use crate::model::ClassificationExample;

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthCorpusConfig { documents: 5, ..Default::default() };
        assert_eq!(generate_documents(&cfg).unwrap(), generate_documents(&cfg).unwrap());
        let other = SynthCorpusConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_documents(&cfg).unwrap(), generate_documents(&other).unwrap());
    }

    #[test]
    fn clean_sentences_are_in_lexicon_and_noise_is_not() {
        let vocab = VocabularySpec::from_words(lexicon()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clean = SynthCorpusConfig { noise_rate: 0.0, ..Default::default() };
        for _ in 0..500 {
            let s = generate_sentence(&clean, &mut rng);
            assert!(sentence_admissible(&s, &vocab), "{s}");
        }
        let noisy = SynthCorpusConfig { noise_rate: 1.0, ..Default::default() };
        for _ in 0..100 {
            assert!(!sentence_admissible(&generate_sentence(&noisy, &mut rng), &vocab));
        }
    }

    #[test]
    fn task_nouns_are_disjoint_and_labels_balanced() {
        let tok = TokenizerModel::bytes_only();
        let t = animal_task(&tok, &AnimalTaskConfig { seq_len: 48, ..Default::default() }).unwrap();
        let ones = t.train.iter().filter(|e| e.label == 1).count();
        assert_eq!(ones * 2, t.train.len());
        let nouns = |exs: &[ClassificationExample]| -> BTreeSet<String> {
            exs.iter()
                .map(|e| tok.decode(&e.input_ids).unwrap())
                .flat_map(|s| {
                    s.split_whitespace()
                        .map(crate::corpus::normalize_word)
                        .filter(|w| ANIMALS.contains(&w.as_str()) || FOODS.contains(&w.as_str()) || TOYS.contains(&w.as_str()))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        assert!(nouns(&t.train).is_disjoint(&nouns(&t.valid)));
    }
}
