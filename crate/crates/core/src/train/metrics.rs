//! Evaluation: intent accuracy, CoNLL-style span F1 over BIO tags, and
//! overall (exact-frame) accuracy.

use crate::corpus::Corpus;
use crate::encoder::{encode, intent_logits, slot_logits, EncoderConfig, EncoderParams, Vocab};
use crate::labels::LabelSpace;
use crate::numerics::{Result, Tape};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub intent_accuracy: f64,
    pub slot_f1: f64,
    pub overall_accuracy: f64,
}

/// A labeled span: half-open token range plus the slot kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

/// Extract spans from a BIO tag sequence, conlleval-style: `B-` starts a
/// span; `I-` continues a span of the same kind and otherwise starts one.
pub fn bio_spans(tags: &[&str]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, kind) = match tag.split_once('-') {
            Some((p, k)) if p == "B" || p == "I" => (p, k),
            _ => ("O", ""),
        };
        let continues = prefix == "I" && open.as_ref().map(|(_, k)| k == kind).unwrap_or(false);
        if !continues {
            if let Some((start, kind)) = open.take() {
                spans.push(Span {
                    start,
                    end: i,
                    kind,
                });
            }
            if prefix != "O" {
                open = Some((i, kind.to_string()));
            }
        }
    }
    if let Some((start, kind)) = open {
        spans.push(Span {
            start,
            end: tags.len(),
            kind,
        });
    }
    spans
}

/// Span-level precision/recall/F1 accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct SpanCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn update(&mut self, predicted: &[Span], gold: &[Span]) {
        self.predicted += predicted.len();
        self.gold += gold.len();
        // exact (start, end, kind) matches; spans within one sequence are
        // disjoint so multiset matching reduces to set intersection
        for p in predicted {
            if gold.contains(p) {
                self.matched += 1;
            }
        }
    }

    pub fn f1(&self) -> f64 {
        if self.predicted == 0 && self.gold == 0 {
            return 1.0;
        }
        if self.matched == 0 {
            return 0.0;
        }
        let p = self.matched as f64 / self.predicted as f64;
        let r = self.matched as f64 / self.gold as f64;
        2.0 * p * r / (p + r)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy predictions for one corpus; pure given the parameters.
pub fn predict(
    params: &EncoderParams,
    config: &EncoderConfig,
    vocab: &Vocab,
    corpus: &Corpus,
) -> Result<Vec<(usize, Vec<usize>)>> {
    let mut out = Vec::with_capacity(corpus.examples.len());
    for u in &corpus.examples {
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let enc = encode(&mut tape, &nodes, config, vocab, u, false, None)?;
        let logits = intent_logits(&mut tape, &nodes, enc.h_cls)?;
        let intent = argmax(tape.value(logits).data());
        let mut slots = Vec::with_capacity(enc.words.len());
        for &w in &enc.words {
            let l = slot_logits(&mut tape, &nodes, w)?;
            slots.push(argmax(tape.value(l).data()));
        }
        out.push((intent, slots));
    }
    Ok(out)
}

/// Intent accuracy, span-level slot F1, and overall accuracy (intent and
/// the entire slot sequence both correct).
pub fn evaluate(
    params: &EncoderParams,
    config: &EncoderConfig,
    vocab: &Vocab,
    corpus: &Corpus,
) -> Result<Metrics> {
    let predictions = predict(params, config, vocab, corpus)?;
    Ok(score(&predictions, corpus, &corpus.space))
}

/// Score precomputed predictions against the gold corpus.
pub fn score(predictions: &[(usize, Vec<usize>)], corpus: &Corpus, space: &LabelSpace) -> Metrics {
    let mut intent_hits = 0usize;
    let mut overall_hits = 0usize;
    let mut counts = SpanCounts::default();
    for ((pred_intent, pred_slots), u) in predictions.iter().zip(&corpus.examples) {
        let intent_ok = *pred_intent == u.intent;
        let slots_ok = pred_slots == &u.slots;
        intent_hits += usize::from(intent_ok);
        overall_hits += usize::from(intent_ok && slots_ok);
        let name =
            |ids: &[usize]| -> Vec<&str> { ids.iter().map(|&s| space.slots[s].as_str()).collect() };
        counts.update(&bio_spans(&name(pred_slots)), &bio_spans(&name(&u.slots)));
    }
    let n = corpus.examples.len().max(1) as f64;
    Metrics {
        intent_accuracy: intent_hits as f64 / n,
        slot_f1: counts.f1(),
        overall_accuracy: overall_hits as f64 / n,
    }
}
