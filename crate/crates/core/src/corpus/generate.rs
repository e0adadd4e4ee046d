//! Seeded synthetic corpus generator.
//!
//! Utterances come from templates: a few intent-specific carrier words,
//! some shared filler words (always O), and one or two slot placeholders
//! filled from per-kind pools. Slot fillers are one or two words long;
//! two-word fillers draw their first word from a B-only pool and their
//! second from an I-only pool, so every slot label is learnable from the
//! word identity alone and BIO span F1 is meaningful.
//!
//! Test corpora are parallel: the abstract template/filler draws are made
//! once and rendered per target language through the same lexeme table
//! that builds the lexicon, which is a total translation of the source
//! vocabulary.

use super::{Corpus, CorpusError, Lexicon, Utterance};
use crate::labels::LabelSpace;
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;

const CARRIERS_PER_INTENT: usize = 4;
const LEXEMES_PER_SLOT_KIND: usize = 6;
const MIN_COMMON_WORDS: usize = 4;
/// Each template is forced into the corpus this many times with two-word
/// fillers, guaranteeing every B- and I- label appears at least this often.
const COVERAGE_ROUNDS: usize = 3;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorSpec {
    pub intents: usize,
    pub slot_kinds: usize,
    pub templates: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub vocab_per_lang: usize,
    pub source_lang: String,
    pub target_langs: Vec<String>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            intents: 4,
            slot_kinds: 5,
            templates: 8,
            train_size: 400,
            test_size: 100,
            vocab_per_lang: 60,
            source_lang: "en".into(),
            target_langs: vec!["de".into()],
        }
    }
}

impl GeneratorSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        let err = |msg: String| Err(CorpusError::Config(msg));
        if self.intents == 0 || self.slot_kinds == 0 {
            return err("need at least one intent and one slot kind".into());
        }
        if self.templates < self.intents {
            return err(format!(
                "more intents ({}) than templates ({})",
                self.intents, self.templates
            ));
        }
        if self.templates < self.slot_kinds {
            return err(format!(
                "more slot kinds ({}) than templates ({}); some slots would never occur",
                self.slot_kinds, self.templates
            ));
        }
        if self.train_size < COVERAGE_ROUNDS * self.templates {
            return err(format!(
                "train size {} cannot cover {} templates {} times each",
                self.train_size, self.templates, COVERAGE_ROUNDS
            ));
        }
        if self.test_size == 0 {
            return err("test size must be positive".into());
        }
        let min_vocab = self.intents * CARRIERS_PER_INTENT
            + self.slot_kinds * LEXEMES_PER_SLOT_KIND
            + MIN_COMMON_WORDS;
        if self.vocab_per_lang < min_vocab {
            return err(format!(
                "vocab {} too small for {} intents and {} slot kinds (need >= {min_vocab})",
                self.vocab_per_lang, self.intents, self.slot_kinds
            ));
        }
        if self.target_langs.is_empty() {
            return err("need at least one target language".into());
        }
        if self.target_langs.iter().any(|l| l == &self.source_lang) {
            return err("target languages must differ from the source language".into());
        }
        Ok(())
    }

    fn surface(&self, lexeme: usize, lang: &str) -> String {
        format!("w{lexeme:03}_{lang}")
    }

    fn carrier_lexemes(&self, intent: usize) -> std::ops::Range<usize> {
        intent * CARRIERS_PER_INTENT..(intent + 1) * CARRIERS_PER_INTENT
    }

    fn slot_base(&self, kind: usize) -> usize {
        self.intents * CARRIERS_PER_INTENT + kind * LEXEMES_PER_SLOT_KIND
    }

    fn common_lexemes(&self) -> std::ops::Range<usize> {
        self.intents * CARRIERS_PER_INTENT + self.slot_kinds * LEXEMES_PER_SLOT_KIND
            ..self.vocab_per_lang
    }

    /// Filler word sequences for a slot kind: two single-word and two
    /// two-word options. Indices 2 and 3 are the two-word fillers.
    fn fillers(&self, kind: usize) -> [Vec<usize>; 4] {
        let b = self.slot_base(kind);
        [vec![b], vec![b + 1], vec![b + 2, b + 4], vec![b + 3, b + 5]]
    }
}

#[derive(Debug, Clone)]
enum Item {
    Word(usize),
    Slot(usize),
}

#[derive(Debug, Clone)]
struct Template {
    intent: usize,
    items: Vec<Item>,
}

/// Template index plus the filler choice for each slot placeholder.
type Draw = (usize, Vec<usize>);

pub struct GeneratedData {
    pub train: Corpus,
    /// Parallel test corpora, one per target language.
    pub tests: Vec<(String, Corpus)>,
    pub lexicon: Lexicon,
}

impl GeneratedData {
    pub fn space(&self) -> &LabelSpace {
        &self.train.space
    }
}

fn build_label_space(spec: &GeneratorSpec) -> LabelSpace {
    let intents = (0..spec.intents).map(|i| format!("intent{i:02}")).collect();
    let mut slots = vec!["O".to_string()];
    for k in 0..spec.slot_kinds {
        slots.push(format!("B-s{k:02}"));
        slots.push(format!("I-s{k:02}"));
    }
    LabelSpace::new(intents, slots, "O").expect("O is in the slot list")
}

fn build_templates(spec: &GeneratorSpec, rng: &mut impl Rng) -> Vec<Template> {
    let mut templates = Vec::with_capacity(spec.templates);
    let mut slot_cursor = 0usize;
    let common: Vec<usize> = spec.common_lexemes().collect();
    for t in 0..spec.templates {
        let intent = t % spec.intents;
        let mut items = Vec::new();
        let mut carriers: Vec<usize> = spec.carrier_lexemes(intent).collect();
        carriers.shuffle(rng);
        for &c in carriers.iter().take(2 + rng.gen_range(0..2)) {
            items.push(Item::Word(c));
        }
        for _ in 0..1 + rng.gen_range(0..2) {
            items.push(Item::Word(common[rng.gen_range(0..common.len())]));
        }
        let slot_count = 1 + rng.gen_range(0..2);
        for _ in 0..slot_count {
            items.push(Item::Slot(slot_cursor % spec.slot_kinds));
            slot_cursor += 1;
        }
        items.shuffle(rng);
        templates.push(Template { intent, items });
    }
    templates
}

fn draw(
    template_idx: usize,
    templates: &[Template],
    force_two_word: bool,
    rng: &mut impl Rng,
) -> Draw {
    let fillers = templates[template_idx]
        .items
        .iter()
        .filter(|i| matches!(i, Item::Slot(_)))
        .map(|_| {
            if force_two_word {
                2 + rng.gen_range(0..2)
            } else {
                rng.gen_range(0..4)
            }
        })
        .collect();
    (template_idx, fillers)
}

fn render(
    spec: &GeneratorSpec,
    templates: &[Template],
    d: &Draw,
    lang: &str,
    space: &LabelSpace,
) -> Utterance {
    let template = &templates[d.0];
    let mut words = Vec::new();
    let mut slots = Vec::new();
    let mut filler_cursor = 0usize;
    for item in &template.items {
        match item {
            Item::Word(lex) => {
                words.push(spec.surface(*lex, lang));
                slots.push(space.o_index);
            }
            Item::Slot(kind) => {
                let filler = &spec.fillers(*kind)[d.1[filler_cursor]];
                filler_cursor += 1;
                for (wi, lex) in filler.iter().enumerate() {
                    words.push(spec.surface(*lex, lang));
                    // B-kind for the first word, I-kind after it
                    slots.push(1 + kind * 2 + usize::from(wi > 0));
                }
            }
        }
    }
    Utterance {
        words,
        intent: template.intent,
        slots,
        lang: lang.to_string(),
    }
}

fn check_coverage(corpus: &Corpus) -> Result<(), CorpusError> {
    let space = &corpus.space;
    let mut intent_counts = vec![0usize; space.num_intents()];
    let mut slot_counts = vec![0usize; space.num_slots()];
    for u in &corpus.examples {
        intent_counts[u.intent] += 1;
        for &s in &u.slots {
            slot_counts[s] += 1;
        }
    }
    for (i, &c) in intent_counts.iter().enumerate() {
        if c < COVERAGE_ROUNDS {
            return Err(CorpusError::Config(format!(
                "intent {:?} occurs only {c} times in train",
                space.intents[i]
            )));
        }
    }
    for (s, &c) in slot_counts.iter().enumerate() {
        if s != space.o_index && c < COVERAGE_ROUNDS {
            return Err(CorpusError::Config(format!(
                "slot label {:?} occurs only {c} times in train",
                space.slots[s]
            )));
        }
    }
    Ok(())
}

/// Build a seeded synthetic setup: source-language training corpus,
/// parallel target-language test corpora, and the total lexicon.
pub fn generate_synthetic(
    spec: &GeneratorSpec,
    root_seed: u64,
) -> Result<GeneratedData, CorpusError> {
    spec.validate()?;
    let space = build_label_space(spec);

    let mut template_rng = seed::stream(root_seed, "templates", &[]);
    let templates = build_templates(spec, &mut template_rng);

    let mut train_rng = seed::stream(root_seed, "train", &[]);
    let mut train_draws: Vec<Draw> = Vec::with_capacity(spec.train_size);
    for _round in 0..COVERAGE_ROUNDS {
        for t in 0..templates.len() {
            train_draws.push(draw(t, &templates, true, &mut train_rng));
        }
    }
    while train_draws.len() < spec.train_size {
        let t = train_rng.gen_range(0..templates.len());
        train_draws.push(draw(t, &templates, false, &mut train_rng));
    }
    let train = Corpus {
        examples: train_draws
            .iter()
            .map(|d| render(spec, &templates, d, &spec.source_lang, &space))
            .collect(),
        space: space.clone(),
    };
    check_coverage(&train)?;

    let mut test_rng = seed::stream(root_seed, "test", &[]);
    let test_draws: Vec<Draw> = (0..spec.test_size)
        .map(|_| {
            let t = test_rng.gen_range(0..templates.len());
            draw(t, &templates, false, &mut test_rng)
        })
        .collect();
    let tests = spec
        .target_langs
        .iter()
        .map(|lang| {
            let corpus = Corpus {
                examples: test_draws
                    .iter()
                    .map(|d| render(spec, &templates, d, lang, &space))
                    .collect(),
                space: space.clone(),
            };
            (lang.clone(), corpus)
        })
        .collect();

    // total and symmetric: each surface translates into every other
    // language, so views exist for target-language utterances too
    let mut all_langs: Vec<&String> = vec![&spec.source_lang];
    all_langs.extend(spec.target_langs.iter());
    let mut entries: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for lexeme in 0..spec.vocab_per_lang {
        for &lang in &all_langs {
            let translations = all_langs
                .iter()
                .filter(|&&l| l != lang)
                .map(|&l| (l.clone(), vec![spec.surface(lexeme, l)]))
                .collect();
            entries.insert(spec.surface(lexeme, lang), translations);
        }
    }

    Ok(GeneratedData {
        train,
        tests,
        lexicon: Lexicon { entries },
    })
}
