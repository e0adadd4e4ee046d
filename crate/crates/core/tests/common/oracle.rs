//! Independent straight-line reference for the composite objective.
//!
//! Deliberately naive: raw exponential ratios, explicit loops, its own
//! one-hot/label-summary/similarity arithmetic, and no code shared with
//! the tape-based implementation. Values are only valid at micro scale
//! where nothing overflows; that is all the equivalence check needs.

use xslu::labels::LabelSpace;
use xslu::losses::{term_weight, LossWeights, Term};

pub struct Item {
    pub src_h: Vec<f64>,
    pub src_words: Vec<Vec<f64>>,
    pub view_h: Vec<f64>,
    pub view_words: Vec<Vec<f64>>,
    pub intent: usize,
    pub slots: Vec<usize>,
}

pub struct Entry {
    pub u: Vec<f64>,
    pub u_ml: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub w_ml: Vec<Vec<f64>>,
    pub intent: usize,
    pub slots: Vec<usize>,
}

pub struct OracleConfig {
    pub tau: f64,
    pub tau_prime: f64,
    pub include_o_anchors: bool,
    pub strict_pairing: bool,
    pub o_index: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cos(a: &[f64], b: &[f64], tau_prime: f64) -> f64 {
    dot(a, b) / (norm(a) * norm(b) * tau_prime)
}

fn one_hot(i: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[i] = 1.0;
    v
}

fn joint(
    intent: usize,
    slots: &[usize],
    num_intents: usize,
    num_slots: usize,
    o: usize,
) -> Vec<f64> {
    let mut v = one_hot(intent, num_intents);
    let mut summary = vec![0.0; num_slots];
    let mut count = 0.0;
    for &s in slots {
        if s != o {
            summary[s] += 1.0;
            count += 1.0;
        }
    }
    if count > 0.0 {
        for x in &mut summary {
            *x /= count;
        }
    }
    v.extend(summary);
    v
}

fn hadamard_sum(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn naive_softmax_nll(weights: &[Vec<f64>], bias: &[f64], h: &[f64], gold: usize) -> f64 {
    let logits: Vec<f64> = weights
        .iter()
        .zip(bias)
        .map(|(row, b)| dot(row, h) + b)
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[gold].exp() / z).ln()
}

/// Sentence-level supervised term for one anchor.
fn scl_sentence(anchor: &[f64], reps: &[&[f64]], mus: &[f64], tau_prime: f64) -> f64 {
    let mu_sum: f64 = mus.iter().sum();
    if reps.is_empty() || mu_sum == 0.0 {
        return 0.0;
    }
    let mut denom = 0.0;
    for r in reps {
        denom += cos(anchor, r, tau_prime).exp();
    }
    let mut loss = 0.0;
    for (r, mu) in reps.iter().zip(mus) {
        if *mu > 0.0 {
            loss -= (mu / mu_sum) * (cos(anchor, r, tau_prime).exp() / denom).ln();
        }
    }
    loss
}

/// Token-level supervised term for one item: candidates are all words of
/// the chosen queue role; anchors with no positive are skipped; mean over
/// contributing anchors.
fn scl_tokens(
    anchor_words: &[Vec<f64>],
    anchor_labels: &[Vec<f64>],
    cand_words: &[Vec<f64>],
    cand_labels: &[Vec<f64>],
    cfg: &OracleConfig,
) -> f64 {
    if cand_words.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut contributing = 0usize;
    for (a, al) in anchor_words.iter().zip(anchor_labels) {
        if !cfg.include_o_anchors && al[cfg.o_index] == 1.0 {
            continue;
        }
        let mus: Vec<f64> = cand_labels.iter().map(|cl| hadamard_sum(al, cl)).collect();
        let mu_sum: f64 = mus.iter().sum();
        if mu_sum == 0.0 {
            continue;
        }
        let mut denom = 0.0;
        for c in cand_words {
            denom += cos(a, c, cfg.tau_prime).exp();
        }
        let mut anchor_loss = 0.0;
        for (c, mu) in cand_words.iter().zip(&mus) {
            if *mu > 0.0 {
                anchor_loss -= (mu / mu_sum) * (cos(a, c, cfg.tau_prime).exp() / denom).ln();
            }
        }
        total += anchor_loss;
        contributing += 1;
    }
    if contributing == 0 {
        0.0
    } else {
        total / contributing as f64
    }
}

fn flat_words(entries: &[Entry], view_role: bool) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for e in entries {
        let role = if view_role { &e.w_ml } else { &e.w };
        for w in role {
            out.push(w.clone());
        }
    }
    out
}

fn flat_slot_labels(entries: &[Entry], num_slots: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for e in entries {
        for &s in &e.slots {
            out.push(one_hot(s, num_slots));
        }
    }
    out
}

fn word_negative_sum(anchor: &[f64], entries: &[Entry], tau: f64) -> f64 {
    let mut acc = 0.0;
    for e in entries {
        for w in &e.w {
            acc += (dot(anchor, w) / tau).exp();
        }
        for w in &e.w_ml {
            acc += (dot(anchor, w) / tau).exp();
        }
    }
    acc
}

fn queue_has_words(entries: &[Entry]) -> bool {
    entries
        .iter()
        .any(|e| !e.w.is_empty() || !e.w_ml.is_empty())
}

/// All 14 terms and the weighted total for one batch.
#[allow(clippy::too_many_arguments)]
pub fn breakdown(
    items: &[Item],
    queue: &[Entry],
    intent_w: &[Vec<f64>],
    intent_b: &[f64],
    slot_w: &[Vec<f64>],
    slot_b: &[f64],
    weights: &LossWeights,
    cfg: &OracleConfig,
    space: &LabelSpace,
) -> ([f64; 14], f64) {
    let num_intents = space.num_intents();
    let num_slots = space.num_slots();
    let mut sums = [0.0_f64; 14];

    let queue_intents: Vec<Vec<f64>> = queue
        .iter()
        .map(|e| one_hot(e.intent, num_intents))
        .collect();
    let queue_joints: Vec<Vec<f64>> = queue
        .iter()
        .map(|e| joint(e.intent, &e.slots, num_intents, num_slots, cfg.o_index))
        .collect();
    let u_reps: Vec<&[f64]> = queue.iter().map(|e| e.u.as_slice()).collect();
    let u_ml_reps: Vec<&[f64]> = queue.iter().map(|e| e.u_ml.as_slice()).collect();
    let w_flat = flat_words(queue, false);
    let w_ml_flat = flat_words(queue, true);
    let w_labels = flat_slot_labels(queue, num_slots);

    for item in items {
        // task CE losses over the view representations
        sums[Term::CeIntent.index()] +=
            naive_softmax_nll(intent_w, intent_b, &item.view_h, item.intent);
        let mut slot_nll = 0.0;
        for (wv, &gold) in item.view_words.iter().zip(&item.slots) {
            slot_nll += naive_softmax_nll(slot_w, slot_b, wv, gold);
        }
        sums[Term::CeSlot.index()] += slot_nll;

        // unsupervised terms, written as raw exponential ratios
        if !queue.is_empty() {
            let pos = (dot(&item.src_h, &item.view_h) / cfg.tau).exp();
            let mut denom = pos;
            for e in queue {
                denom += (dot(&item.src_h, &e.u) / cfg.tau).exp();
                denom += (dot(&item.src_h, &e.u_ml) / cfg.tau).exp();
            }
            sums[Term::UnIntent.index()] += -(pos / denom).ln();
        }
        if queue_has_words(queue) {
            let n = item.src_words.len();
            let mut total = 0.0;
            let mut pairs = 0usize;
            for (i, wi) in item.src_words.iter().enumerate() {
                let neg = word_negative_sum(wi, queue, cfg.tau);
                for (j, mj) in item.view_words.iter().enumerate() {
                    if cfg.strict_pairing && i != j {
                        continue;
                    }
                    let pos = (dot(wi, mj) / cfg.tau).exp();
                    total += -(pos / (pos + neg)).ln();
                    pairs += 1;
                }
            }
            let _ = n;
            sums[Term::UnSlot.index()] += total / pairs as f64;

            let neg = word_negative_sum(&item.src_h, queue, cfg.tau);
            let mut half1 = 0.0;
            for w in &item.src_words {
                let pos = (dot(&item.src_h, w) / cfg.tau).exp();
                half1 += -(pos / (pos + neg)).ln();
            }
            let mut half2 = 0.0;
            for w in &item.view_words {
                let pos = (dot(&item.src_h, w) / cfg.tau).exp();
                half2 += -(pos / (pos + neg)).ln();
            }
            sums[Term::UnGis.index()] +=
                half1 / item.src_words.len() as f64 + half2 / item.view_words.len() as f64;
        }

        // supervised terms
        let anchor_intent = one_hot(item.intent, num_intents);
        let anchor_joint = joint(
            item.intent,
            &item.slots,
            num_intents,
            num_slots,
            cfg.o_index,
        );
        let intent_mus: Vec<f64> = queue_intents
            .iter()
            .map(|q| hadamard_sum(&anchor_intent, q))
            .collect();
        let joint_mus: Vec<f64> = queue_joints
            .iter()
            .map(|q| hadamard_sum(&anchor_joint, q))
            .collect();
        let anchor_slot_labels: Vec<Vec<f64>> =
            item.slots.iter().map(|&s| one_hot(s, num_slots)).collect();

        sums[Term::SlsclIntent.index()] +=
            scl_sentence(&item.src_h, &u_reps, &intent_mus, cfg.tau_prime);
        sums[Term::SlsclJoint.index()] +=
            scl_sentence(&item.src_h, &u_reps, &joint_mus, cfg.tau_prime);
        sums[Term::SlsclSlot.index()] += scl_tokens(
            &item.src_words,
            &anchor_slot_labels,
            &w_flat,
            &w_labels,
            cfg,
        );

        sums[Term::ClsclIntent.index()] +=
            scl_sentence(&item.view_h, &u_reps, &intent_mus, cfg.tau_prime);
        sums[Term::ClsclJoint.index()] +=
            scl_sentence(&item.view_h, &u_reps, &joint_mus, cfg.tau_prime);
        sums[Term::ClsclSlot.index()] += scl_tokens(
            &item.view_words,
            &anchor_slot_labels,
            &w_flat,
            &w_labels,
            cfg,
        );

        sums[Term::MlsclIntent.index()] +=
            scl_sentence(&item.view_h, &u_ml_reps, &intent_mus, cfg.tau_prime);
        sums[Term::MlsclJoint.index()] +=
            scl_sentence(&item.view_h, &u_ml_reps, &joint_mus, cfg.tau_prime);
        sums[Term::MlsclSlot.index()] += scl_tokens(
            &item.view_words,
            &anchor_slot_labels,
            &w_ml_flat,
            &w_labels,
            cfg,
        );
    }

    let n = items.len() as f64;
    let mut terms = [0.0_f64; 14];
    for (t, s) in terms.iter_mut().zip(sums) {
        *t = s / n;
    }
    let mut total = 0.0;
    for t in Term::ALL {
        total += term_weight(weights, t) * terms[t.index()];
    }
    (terms, total)
}
