//! Data model for multilingual SLU examples, JSONL persistence, and
//! lexicon-based code-switching.

mod generate;

pub use generate::{generate_synthetic, GeneratedData, GeneratorSpec};

use crate::labels::LabelSpace;
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One training example: whitespace-level tokens, an intent, and one slot
/// label per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub words: Vec<String>,
    pub intent: usize,
    pub slots: Vec<usize>,
    pub lang: String,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Word -> language -> translations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    pub entries: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl Lexicon {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let lex: Lexicon = serde_json::from_str(&text).map_err(|e| CorpusError::Record {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        for (word, langs) in &lex.entries {
            for (lang, translations) in langs {
                if translations.is_empty() {
                    return Err(CorpusError::Config(format!(
                        "lexicon entry {word:?} -> {lang:?} has an empty translation list"
                    )));
                }
            }
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut text = serde_json::to_string_pretty(self).expect("lexicon serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// All words across all languages: source words (the keys) plus every
    /// translation. This is the vocabulary the encoder must cover.
    pub fn all_words(&self) -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        for (word, langs) in &self.entries {
            words.push(word.clone());
            for translations in langs.values() {
                words.extend(translations.iter().cloned());
            }
        }
        words.sort();
        words.dedup();
        words
    }
}

/// Language tag given to code-switched views (mixed-language content).
pub const VIEW_LANG: &str = "mul";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSwitchConfig {
    /// Per-word substitution probability.
    pub p: f64,
    /// Languages a substitution may draw from.
    pub target_langs: Vec<String>,
    pub seed: u64,
}

impl CodeSwitchConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(CorpusError::Config(format!(
                "substitution probability must be in [0,1], got {}",
                self.p
            )));
        }
        if self.p > 0.0 && self.target_langs.is_empty() {
            return Err(CorpusError::Config(
                "p > 0 requires at least one target language".into(),
            ));
        }
        Ok(())
    }
}

/// Multilingual view of an utterance: each word is independently replaced
/// with probability `p` by a uniformly chosen translation in a uniformly
/// chosen allowed language. Length, intent, and slot labels are preserved;
/// words without a usable lexicon entry stay as they are.
pub fn code_switch(u: &Utterance, lex: &Lexicon, cfg: &CodeSwitchConfig) -> Utterance {
    let mut rng = seed::stream(cfg.seed, "code-switch", &[]);
    code_switch_with_rng(u, lex, cfg.p, &cfg.target_langs, &mut rng)
}

/// As [`code_switch`] but drawing from a caller-owned RNG, so the training
/// loop can give every (epoch, step, item) its own substream.
pub fn code_switch_with_rng(
    u: &Utterance,
    lex: &Lexicon,
    p: f64,
    target_langs: &[String],
    rng: &mut impl Rng,
) -> Utterance {
    let mut words = Vec::with_capacity(u.words.len());
    for word in &u.words {
        let mut out = word.clone();
        if p > 0.0 && rng.gen_bool(p) {
            if let Some(entry) = lex.entries.get(word) {
                let available: Vec<&String> = target_langs
                    .iter()
                    .filter(|l| entry.get(*l).is_some_and(|t| !t.is_empty()))
                    .collect();
                if !available.is_empty() {
                    let lang = available[rng.gen_range(0..available.len())];
                    let translations = &entry[lang];
                    out = translations[rng.gen_range(0..translations.len())].clone();
                }
            }
        }
        words.push(out);
    }
    Utterance {
        words,
        intent: u.intent,
        slots: u.slots.clone(),
        lang: VIEW_LANG.to_string(),
    }
}

/// A set of examples sharing one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<Utterance>,
    pub space: LabelSpace,
}

#[derive(Serialize, Deserialize)]
struct Record {
    words: Vec<String>,
    intent: String,
    slots: Vec<String>,
    lang: String,
}

/// JSON Lines, one object per utterance; labels serialized by name.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for u in &corpus.examples {
        let record = Record {
            words: u.words.clone(),
            intent: corpus.space.intents[u.intent].clone(),
            slots: u
                .slots
                .iter()
                .map(|&s| corpus.space.slots[s].clone())
                .collect(),
            lang: u.lang.clone(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| CorpusError::Record {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn load_corpus(path: &Path, space: &LabelSpace) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let record_err = |msg: String| CorpusError::Record {
            path: path.display().to_string(),
            line: line_no,
            msg,
        };
        let line = line.map_err(|e| record_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        if record.words.is_empty() {
            return Err(record_err("utterance has no words".into()));
        }
        if record.slots.len() != record.words.len() {
            return Err(record_err(format!(
                "{} slots for {} words",
                record.slots.len(),
                record.words.len()
            )));
        }
        let intent = space
            .intent_id(&record.intent)
            .ok_or_else(|| record_err(format!("unknown intent {:?}", record.intent)))?;
        let slots = record
            .slots
            .iter()
            .map(|s| {
                space
                    .slot_id(s)
                    .ok_or_else(|| record_err(format!("unknown slot label {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        examples.push(Utterance {
            words: record.words,
            intent,
            slots,
            lang: record.lang,
        });
    }
    Ok(Corpus {
        examples,
        space: space.clone(),
    })
}
