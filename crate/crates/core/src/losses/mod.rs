//! Contrastive and cross-entropy loss terms and the composite objective.
//!
//! Fourteen scalar terms feed one weighted total: two task CE losses, three
//! unsupervised contrastive terms (raw dot-product similarity over `tau`),
//! and nine supervised contrastive terms (cosine similarity over
//! `tau_prime`) built from two generic kernels — a sentence-level one and a
//! token-level one — instantiated with intent one-hots, slot one-hots, or
//! joint labels against the matching queue role.
//!
//! Every denominator goes through `log_sum_exp`; nothing here exponentiates
//! a similarity directly, so small temperatures cannot overflow.
//!
//! Candidate iteration orders are fixed for determinism:
//! queue entries oldest-first; within token-level terms, each entry's words
//! in position order; unsupervised negatives interleave per entry (source
//! role first, then view role).

pub mod gradcheck;

use crate::encoder::{intent_probs, slot_probs, EncodedUtterance, ParamNodes};
use crate::labels::{self, JointLabel, LabelError};
use crate::numerics::{NodeId, NumericsError, Tape};
use crate::queues::QueueSnapshot;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("negative label weight mu = {0}")]
    NegativeMu(f64),
    #[error("mismatched lengths in {op}: {lhs} vs {rhs}")]
    Mismatch {
        op: &'static str,
        lhs: usize,
        rhs: usize,
    },
    #[error("loss term {term} is non-finite")]
    NonFiniteTerm { term: &'static str },
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Temperatures and anchor policy for the contrastive terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CLConfig {
    /// Unsupervised temperature (dot-product similarity).
    pub tau: f64,
    /// Supervised temperature (cosine similarity).
    pub tau_prime: f64,
    /// Include O-labeled words as token-level anchors.
    pub include_o_anchors: bool,
    /// Restrict the token-level unsupervised positives to aligned
    /// positions (i == j) instead of all cross pairs.
    pub strict_pairing: bool,
}

impl Default for CLConfig {
    fn default() -> Self {
        CLConfig {
            tau: 0.1,
            tau_prime: 0.1,
            include_o_anchors: true,
            strict_pairing: false,
        }
    }
}

impl CLConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tau <= 0.0 || self.tau_prime <= 0.0 {
            return Err(format!(
                "temperatures must be positive (tau={}, tau_prime={})",
                self.tau, self.tau_prime
            ));
        }
        Ok(())
    }
}

/// Weights of the composite objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_i: f64,
    pub lambda_s: f64,
    pub lambda_un_i: f64,
    pub lambda_un_s: f64,
    pub lambda_un_gis: f64,
    pub beta_i: f64,
    pub beta_s: f64,
    pub beta_j: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_i: 1.0,
            lambda_s: 1.0,
            lambda_un_i: 0.01,
            lambda_un_s: 0.005,
            lambda_un_gis: 0.01,
            beta_i: 1e-2,
            beta_s: 1e-4,
            beta_j: 1e-4,
            gamma1: 0.1,
            gamma2: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [
            self.lambda_i,
            self.lambda_s,
            self.lambda_un_i,
            self.lambda_un_s,
            self.lambda_un_gis,
            self.beta_i,
            self.beta_s,
            self.beta_j,
            self.gamma1,
            self.gamma2,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err("loss weights must be non-negative and finite".into());
        }
        Ok(())
    }
}

/// The fourteen named terms, in breakdown order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    CeIntent,
    CeSlot,
    UnIntent,
    UnSlot,
    UnGis,
    SlsclIntent,
    SlsclSlot,
    SlsclJoint,
    ClsclIntent,
    ClsclSlot,
    ClsclJoint,
    MlsclIntent,
    MlsclSlot,
    MlsclJoint,
}

impl Term {
    pub const ALL: [Term; 14] = [
        Term::CeIntent,
        Term::CeSlot,
        Term::UnIntent,
        Term::UnSlot,
        Term::UnGis,
        Term::SlsclIntent,
        Term::SlsclSlot,
        Term::SlsclJoint,
        Term::ClsclIntent,
        Term::ClsclSlot,
        Term::ClsclJoint,
        Term::MlsclIntent,
        Term::MlsclSlot,
        Term::MlsclJoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::CeIntent => "L_I",
            Term::CeSlot => "L_S",
            Term::UnIntent => "L_un_I",
            Term::UnSlot => "L_un_S",
            Term::UnGis => "L_un_GIS",
            Term::SlsclIntent => "L_slscl_I",
            Term::SlsclSlot => "L_slscl_S",
            Term::SlsclJoint => "L_slscl_Joint",
            Term::ClsclIntent => "L_clscl_I",
            Term::ClsclSlot => "L_clscl_S",
            Term::ClsclJoint => "L_clscl_Joint",
            Term::MlsclIntent => "L_mlscl_I",
            Term::MlsclSlot => "L_mlscl_S",
            Term::MlsclJoint => "L_mlscl_Joint",
        }
    }

    pub fn from_name(name: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn index(self) -> usize {
        Term::ALL.iter().position(|t| *t == self).unwrap()
    }

    pub fn is_supervised_cl(self) -> bool {
        self.index() >= 5
    }

    pub fn is_unsupervised_cl(self) -> bool {
        matches!(self, Term::UnIntent | Term::UnSlot | Term::UnGis)
    }
}

/// Multiplicative on/off gates per term; gated-off terms are skipped
/// entirely so their breakdown entries are exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermGates([bool; 14]);

impl Default for TermGates {
    fn default() -> Self {
        TermGates([true; 14])
    }
}

impl TermGates {
    pub fn all_on() -> Self {
        Self::default()
    }

    pub fn without(mut self, terms: &[Term]) -> Self {
        for t in terms {
            self.0[t.index()] = false;
        }
        self
    }

    pub fn is_on(&self, t: Term) -> bool {
        self.0[t.index()]
    }
}

/// Effective weight of each term in the composite objective given the
/// configured lambda/beta/gamma values.
pub fn term_weight(w: &LossWeights, t: Term) -> f64 {
    match t {
        Term::CeIntent => w.lambda_i,
        Term::CeSlot => w.lambda_s,
        Term::UnIntent => w.lambda_un_i,
        Term::UnSlot => w.lambda_un_s,
        Term::UnGis => w.lambda_un_gis,
        Term::SlsclIntent => w.beta_i,
        Term::SlsclSlot => w.beta_s,
        Term::SlsclJoint => w.beta_j,
        Term::ClsclIntent => w.gamma1 * w.beta_i,
        Term::ClsclSlot => w.gamma1 * w.beta_s,
        Term::ClsclJoint => w.gamma1 * w.beta_j,
        Term::MlsclIntent => w.gamma2 * w.beta_i,
        Term::MlsclSlot => w.gamma2 * w.beta_s,
        Term::MlsclJoint => w.gamma2 * w.beta_j,
    }
}

/// All term values plus the weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub terms: [f64; 14],
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, t: Term) -> f64 {
        self.terms[t.index()]
    }

    /// JSON object keyed by term name, plus `"total"`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for t in Term::ALL {
            map.insert(t.name().to_string(), serde_json::json!(self.get(t)));
        }
        map.insert("total".to_string(), serde_json::json!(self.total));
        serde_json::Value::Object(map)
    }
}

fn check_mus(mus: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &m in mus {
        if m < 0.0 {
            return Err(LossError::NegativeMu(m));
        }
        total += m;
    }
    Ok(total)
}

/// Weighted contrastive pull of `anchor` toward positive queue entries:
/// with `w_k = mu_k / sum(mu)`, returns
/// `-sum_k w_k * [s(anchor, q_k) - log sum_j exp(s(anchor, q_j))]`
/// where `s` is cosine similarity over `tau_prime`. Zero when the queue is
/// empty or no entry is positive.
pub fn scl_sentence(
    tape: &mut Tape,
    anchor: NodeId,
    queue_reps: &[NodeId],
    mus: &[f64],
    tau_prime: f64,
) -> Result<NodeId> {
    if queue_reps.len() != mus.len() {
        return Err(LossError::Mismatch {
            op: "scl_sentence",
            lhs: queue_reps.len(),
            rhs: mus.len(),
        });
    }
    let mu_total = check_mus(mus)?;
    if queue_reps.is_empty() || mu_total == 0.0 {
        return Ok(tape.scalar_const(0.0));
    }
    let anchor_norm = tape.norm(anchor)?;
    let mut sims = Vec::with_capacity(queue_reps.len());
    for &q in queue_reps {
        let qn = tape.norm(q)?;
        sims.push(tape.cosine_sim_cached(anchor, q, anchor_norm, qn, tau_prime)?);
    }
    scl_from_sims(tape, &sims, mus, mu_total)
}

fn scl_from_sims(tape: &mut Tape, sims: &[NodeId], mus: &[f64], mu_total: f64) -> Result<NodeId> {
    let sims_vec = tape.from_scalars(sims)?;
    let lse = tape.log_sum_exp(sims_vec)?;
    let weights: Vec<f64> = mus.iter().map(|m| m / mu_total).collect();
    let pulled = tape.weighted_sum(sims_vec, weights)?;
    Ok(tape.sub(lse, pulled)?)
}

/// Token-level supervised contrastive kernel.
///
/// Anchors are `(word vector, slot one-hot)` pairs; candidates are all
/// queue words flattened in entry-then-position order with their labels.
/// Each anchor with at least one positive candidate contributes a
/// mu-weighted softmax pull over the full candidate set; the result is the
/// mean over contributing anchors, or zero when there are none.
#[allow(clippy::too_many_arguments)]
pub fn scl_tokens(
    tape: &mut Tape,
    anchors: &[(NodeId, &[f64])],
    candidates: &[(NodeId, &[f64])],
    label_sim: fn(&[f64], &[f64]) -> std::result::Result<f64, LabelError>,
    tau_prime: f64,
    skip_anchors_at: Option<usize>,
) -> Result<NodeId> {
    if candidates.is_empty() || anchors.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    let mut cand_norms = Vec::with_capacity(candidates.len());
    for (c, _) in candidates {
        cand_norms.push(tape.norm(*c)?);
    }
    let mut anchor_norms = Vec::with_capacity(anchors.len());
    for (a, _) in anchors {
        anchor_norms.push(tape.norm(*a)?);
    }
    scl_tokens_cached(
        tape,
        anchors,
        &anchor_norms,
        candidates,
        &cand_norms,
        label_sim,
        tau_prime,
        skip_anchors_at,
    )
}

#[allow(clippy::too_many_arguments)]
fn scl_tokens_cached(
    tape: &mut Tape,
    anchors: &[(NodeId, &[f64])],
    anchor_norms: &[NodeId],
    candidates: &[(NodeId, &[f64])],
    cand_norms: &[NodeId],
    label_sim: fn(&[f64], &[f64]) -> std::result::Result<f64, LabelError>,
    tau_prime: f64,
    skip_anchors_at: Option<usize>,
) -> Result<NodeId> {
    if candidates.is_empty() || anchors.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    let mut per_anchor = Vec::new();
    for ((anchor, label), &anchor_norm) in anchors.iter().zip(anchor_norms) {
        if let Some(o) = skip_anchors_at {
            if label.get(o) == Some(&1.0) {
                continue;
            }
        }
        let mut mus = Vec::with_capacity(candidates.len());
        for (_, cl) in candidates {
            mus.push(label_sim(label, cl)?);
        }
        let mu_total = check_mus(&mus)?;
        if mu_total == 0.0 {
            continue;
        }
        let mut sims = Vec::with_capacity(candidates.len());
        for ((c, _), &cn) in candidates.iter().zip(cand_norms) {
            sims.push(tape.cosine_sim_cached(*anchor, *c, anchor_norm, cn, tau_prime)?);
        }
        per_anchor.push(scl_from_sims(tape, &sims, &mus, mu_total)?);
    }
    if per_anchor.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    let stacked = tape.from_scalars(&per_anchor)?;
    Ok(tape.mean(stacked)?)
}

fn dot_over_tau(tape: &mut Tape, a: NodeId, b: NodeId, tau: f64) -> Result<NodeId> {
    let d = tape.dot(a, b)?;
    Ok(tape.scale(d, 1.0 / tau)?)
}

/// Sentence-level unsupervised term: the anchor's only positive is its own
/// view; negatives are both sentence queue roles, interleaved per entry.
/// Exactly zero on an empty queue (the ratio's numerator equals its
/// denominator).
pub fn unsup_intent(
    tape: &mut Tape,
    h_cls: NodeId,
    ml_h_cls: NodeId,
    queue_u: &[NodeId],
    queue_u_ml: &[NodeId],
    tau: f64,
) -> Result<NodeId> {
    if queue_u.len() != queue_u_ml.len() {
        return Err(LossError::Mismatch {
            op: "unsup_intent",
            lhs: queue_u.len(),
            rhs: queue_u_ml.len(),
        });
    }
    if queue_u.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    let pos = dot_over_tau(tape, h_cls, ml_h_cls, tau)?;
    let mut all = vec![pos];
    for (&u, &u_ml) in queue_u.iter().zip(queue_u_ml) {
        all.push(dot_over_tau(tape, h_cls, u, tau)?);
        all.push(dot_over_tau(tape, h_cls, u_ml, tau)?);
    }
    let stacked = tape.from_scalars(&all)?;
    let lse = tape.log_sum_exp(stacked)?;
    Ok(tape.sub(lse, pos)?)
}

/// Word-queue negatives for one anchor vector: per entry, its source-role
/// words then its view-role words.
fn word_negatives(
    tape: &mut Tape,
    anchor: NodeId,
    queue_w: &[Vec<NodeId>],
    queue_w_ml: &[Vec<NodeId>],
    tau: f64,
) -> Result<Vec<NodeId>> {
    let mut negs = Vec::new();
    for (ws, mls) in queue_w.iter().zip(queue_w_ml) {
        for &w in ws {
            negs.push(dot_over_tau(tape, anchor, w, tau)?);
        }
        for &w in mls {
            negs.push(dot_over_tau(tape, anchor, w, tau)?);
        }
    }
    Ok(negs)
}

/// Token-level unsupervised term: every (source word, view word) pair is a
/// positive (or only aligned pairs under strict pairing); negatives are all
/// words in both word-queue roles. Mean over pairs; zero on empty queue.
pub fn unsup_slot(
    tape: &mut Tape,
    words: &[NodeId],
    ml_words: &[NodeId],
    queue_w: &[Vec<NodeId>],
    queue_w_ml: &[Vec<NodeId>],
    tau: f64,
    strict_pairing: bool,
) -> Result<NodeId> {
    if words.len() != ml_words.len() {
        return Err(LossError::Mismatch {
            op: "unsup_slot",
            lhs: words.len(),
            rhs: ml_words.len(),
        });
    }
    if queue_w.iter().all(|w| w.is_empty()) && queue_w_ml.iter().all(|w| w.is_empty()) {
        return Ok(tape.scalar_const(0.0));
    }
    let mut pair_terms = Vec::new();
    for (i, &wi) in words.iter().enumerate() {
        let negs = word_negatives(tape, wi, queue_w, queue_w_ml, tau)?;
        for (j, &mj) in ml_words.iter().enumerate() {
            if strict_pairing && i != j {
                continue;
            }
            let pos = dot_over_tau(tape, wi, mj, tau)?;
            let mut all = vec![pos];
            all.extend_from_slice(&negs);
            let stacked = tape.from_scalars(&all)?;
            let lse = tape.log_sum_exp(stacked)?;
            pair_terms.push(tape.sub(lse, pos)?);
        }
    }
    let stacked = tape.from_scalars(&pair_terms)?;
    Ok(tape.mean(stacked)?)
}

/// Global intent-slot unsupervised term: the sentence vector against its
/// own source words and its own view words, each averaged over positions,
/// with negatives from both word-queue roles. Zero on empty queue.
pub fn unsup_gis(
    tape: &mut Tape,
    h_cls: NodeId,
    words: &[NodeId],
    ml_words: &[NodeId],
    queue_w: &[Vec<NodeId>],
    queue_w_ml: &[Vec<NodeId>],
    tau: f64,
) -> Result<NodeId> {
    if queue_w.iter().all(|w| w.is_empty()) && queue_w_ml.iter().all(|w| w.is_empty()) {
        return Ok(tape.scalar_const(0.0));
    }
    let negs = word_negatives(tape, h_cls, queue_w, queue_w_ml, tau)?;
    let mut halves = Vec::with_capacity(2);
    for side in [words, ml_words] {
        let mut terms = Vec::with_capacity(side.len());
        for &w in side {
            let pos = dot_over_tau(tape, h_cls, w, tau)?;
            let mut all = vec![pos];
            all.extend_from_slice(&negs);
            let stacked = tape.from_scalars(&all)?;
            let lse = tape.log_sum_exp(stacked)?;
            terms.push(tape.sub(lse, pos)?);
        }
        let stacked = tape.from_scalars(&terms)?;
        halves.push(tape.mean(stacked)?);
    }
    Ok(tape.add(halves[0], halves[1])?)
}

/// Negative log-likelihood of the gold class under a probability vector.
pub fn intent_ce(tape: &mut Tape, probs: NodeId, gold: usize) -> Result<NodeId> {
    let p = tape.index(probs, gold)?;
    let lp = tape.ln(p)?;
    Ok(tape.scale(lp, -1.0)?)
}

/// Sum of per-position NLL over the slot sequence.
pub fn slot_ce(tape: &mut Tape, word_probs: &[NodeId], golds: &[usize]) -> Result<NodeId> {
    if word_probs.len() != golds.len() {
        return Err(LossError::Mismatch {
            op: "slot_ce",
            lhs: word_probs.len(),
            rhs: golds.len(),
        });
    }
    let mut parts = Vec::with_capacity(golds.len());
    for (&p, &g) in word_probs.iter().zip(golds) {
        parts.push(intent_ce(tape, p, g)?);
    }
    let stacked = tape.from_scalars(&parts)?;
    Ok(tape.sum(stacked)?)
}

/// One batch element ready for loss computation: both encodings plus the
/// labels shared by the source utterance and its view.
pub struct BatchItem {
    pub src: EncodedUtterance,
    pub view: EncodedUtterance,
    pub intent: usize,
    pub slots: Vec<usize>,
    pub intent_onehot: Vec<f64>,
    pub slot_onehots: Vec<Vec<f64>>,
    pub joint: JointLabel,
}

impl BatchItem {
    pub fn new(
        src: EncodedUtterance,
        view: EncodedUtterance,
        intent: usize,
        slots: Vec<usize>,
        space: &labels::LabelSpace,
    ) -> BatchItem {
        let intent_onehot = labels::one_hot(intent, space.num_intents());
        let slot_onehots = slots
            .iter()
            .map(|&s| labels::one_hot(s, space.num_slots()))
            .collect();
        let joint = labels::joint_label(intent, &slots, space);
        BatchItem {
            src,
            view,
            intent,
            slots,
            intent_onehot,
            slot_onehots,
            joint,
        }
    }
}

/// Queue snapshot registered on the tape as constants, entry order
/// preserved. Built once per step.
struct SnapNodes<'a> {
    u: Vec<NodeId>,
    u_ml: Vec<NodeId>,
    w: Vec<Vec<NodeId>>,
    w_ml: Vec<Vec<NodeId>>,
    intent_onehots: Vec<&'a [f64]>,
    joints: Vec<&'a [f64]>,
    slot_onehots: Vec<&'a Vec<Vec<f64>>>,
}

impl<'a> SnapNodes<'a> {
    fn register(tape: &mut Tape, snapshot: &'a QueueSnapshot) -> SnapNodes<'a> {
        let mut nodes = SnapNodes {
            u: Vec::new(),
            u_ml: Vec::new(),
            w: Vec::new(),
            w_ml: Vec::new(),
            intent_onehots: Vec::new(),
            joints: Vec::new(),
            slot_onehots: Vec::new(),
        };
        for e in snapshot.iter() {
            nodes.u.push(tape.constant(e.h_cls.clone()));
            nodes.u_ml.push(tape.constant(e.ml_h_cls.clone()));
            nodes
                .w
                .push(e.words.iter().map(|t| tape.constant(t.clone())).collect());
            nodes.w_ml.push(
                e.ml_words
                    .iter()
                    .map(|t| tape.constant(t.clone()))
                    .collect(),
            );
            nodes.intent_onehots.push(&e.intent_onehot);
            nodes.joints.push(e.joint.as_slice());
            nodes.slot_onehots.push(&e.slot_onehots);
        }
        nodes
    }

    /// Flattened `(word, slot one-hot)` candidates for one word-queue role.
    fn token_candidates(&self, view_role: bool) -> Vec<(NodeId, &'a [f64])> {
        let role = if view_role { &self.w_ml } else { &self.w };
        let mut out = Vec::new();
        for (entry_words, entry_labels) in role.iter().zip(&self.slot_onehots) {
            for (&w, l) in entry_words.iter().zip(entry_labels.iter()) {
                out.push((w, l.as_slice()));
            }
        }
        out
    }
}

fn mu_checked(a: &[f64], b: &[f64]) -> std::result::Result<f64, LabelError> {
    labels::mu(a, b)
}

struct NormCache {
    u: Vec<NodeId>,
    u_ml: Vec<NodeId>,
    w_flat: Vec<NodeId>,
    w_ml_flat: Vec<NodeId>,
}

#[allow(clippy::too_many_arguments)]
fn sentence_scl_pair(
    tape: &mut Tape,
    anchor: NodeId,
    reps: &[NodeId],
    rep_norms: &[NodeId],
    intent_mus: Option<&[f64]>,
    joint_mus: Option<&[f64]>,
    tau_prime: f64,
) -> Result<(Option<NodeId>, Option<NodeId>)> {
    // The two label flavors share anchor/queue similarities; compute them
    // once when either term is live.
    let mut out = (None, None);
    if reps.is_empty() {
        if intent_mus.is_some() {
            out.0 = Some(tape.scalar_const(0.0));
        }
        if joint_mus.is_some() {
            out.1 = Some(tape.scalar_const(0.0));
        }
        return Ok(out);
    }
    let intent_total = intent_mus.map(check_mus).transpose()?;
    let joint_total = joint_mus.map(check_mus).transpose()?;
    let need_sims = intent_total.unwrap_or(0.0) > 0.0 || joint_total.unwrap_or(0.0) > 0.0;
    let sims = if need_sims {
        let anchor_norm = tape.norm(anchor)?;
        let mut sims = Vec::with_capacity(reps.len());
        for (&q, &qn) in reps.iter().zip(rep_norms) {
            sims.push(tape.cosine_sim_cached(anchor, q, anchor_norm, qn, tau_prime)?);
        }
        Some(sims)
    } else {
        None
    };
    if let (Some(mus), Some(total)) = (intent_mus, intent_total) {
        out.0 = Some(if total == 0.0 {
            tape.scalar_const(0.0)
        } else {
            scl_from_sims(tape, sims.as_ref().unwrap(), mus, total)?
        });
    }
    if let (Some(mus), Some(total)) = (joint_mus, joint_total) {
        out.1 = Some(if total == 0.0 {
            tape.scalar_const(0.0)
        } else {
            scl_from_sims(tape, sims.as_ref().unwrap(), mus, total)?
        });
    }
    Ok(out)
}

/// Compute every enabled term for a batch and combine them into the
/// weighted total. Per-term values are batch means over the items
/// (the slot CE summing over positions within an item, as defined).
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    params: &ParamNodes,
    batch: &[BatchItem],
    snapshot: &QueueSnapshot,
    weights: &LossWeights,
    gates: &TermGates,
    cl: &CLConfig,
    o_index: usize,
) -> Result<(NodeId, LossBreakdown)> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let snap = SnapNodes::register(tape, snapshot);
    let on = |t: Term| gates.is_on(t);

    // Queue-side norms, shared across all anchors in the batch.
    let mut norms = NormCache {
        u: Vec::new(),
        u_ml: Vec::new(),
        w_flat: Vec::new(),
        w_ml_flat: Vec::new(),
    };
    if on(Term::SlsclIntent)
        || on(Term::SlsclJoint)
        || on(Term::ClsclIntent)
        || on(Term::ClsclJoint)
    {
        for &q in &snap.u {
            norms.u.push(tape.norm(q)?);
        }
    }
    if on(Term::MlsclIntent) || on(Term::MlsclJoint) {
        for &q in &snap.u_ml {
            norms.u_ml.push(tape.norm(q)?);
        }
    }
    let w_candidates = snap.token_candidates(false);
    let w_ml_candidates = snap.token_candidates(true);
    if on(Term::SlsclSlot) || on(Term::ClsclSlot) {
        for (c, _) in &w_candidates {
            norms.w_flat.push(tape.norm(*c)?);
        }
    }
    if on(Term::MlsclSlot) {
        for (c, _) in &w_ml_candidates {
            norms.w_ml_flat.push(tape.norm(*c)?);
        }
    }

    let skip_o = if cl.include_o_anchors {
        None
    } else {
        Some(o_index)
    };

    let mut per_term: [Vec<NodeId>; 14] = Default::default();
    for item in batch {
        // task CE over the view representations
        if on(Term::CeIntent) {
            let probs = intent_probs(tape, params, item.view.h_cls)?;
            per_term[Term::CeIntent.index()].push(intent_ce(tape, probs, item.intent)?);
        }
        if on(Term::CeSlot) {
            let mut probs = Vec::with_capacity(item.view.words.len());
            for &w in &item.view.words {
                probs.push(slot_probs(tape, params, w)?);
            }
            per_term[Term::CeSlot.index()].push(slot_ce(tape, &probs, &item.slots)?);
        }

        if on(Term::UnIntent) {
            per_term[Term::UnIntent.index()].push(unsup_intent(
                tape,
                item.src.h_cls,
                item.view.h_cls,
                &snap.u,
                &snap.u_ml,
                cl.tau,
            )?);
        }
        if on(Term::UnSlot) {
            per_term[Term::UnSlot.index()].push(unsup_slot(
                tape,
                &item.src.words,
                &item.view.words,
                &snap.w,
                &snap.w_ml,
                cl.tau,
                cl.strict_pairing,
            )?);
        }
        if on(Term::UnGis) {
            per_term[Term::UnGis.index()].push(unsup_gis(
                tape,
                item.src.h_cls,
                &item.src.words,
                &item.view.words,
                &snap.w,
                &snap.w_ml,
                cl.tau,
            )?);
        }

        let intent_mus: Vec<f64> = snap
            .intent_onehots
            .iter()
            .map(|q| mu_checked(&item.intent_onehot, q))
            .collect::<std::result::Result<_, _>>()?;
        let joint_mus: Vec<f64> = snap
            .joints
            .iter()
            .map(|q| mu_checked(item.joint.as_slice(), q))
            .collect::<std::result::Result<_, _>>()?;

        // source-anchor supervised terms (queue role: source)
        let (i_term, j_term) = sentence_scl_pair(
            tape,
            item.src.h_cls,
            &snap.u,
            &norms.u,
            on(Term::SlsclIntent).then_some(intent_mus.as_slice()),
            on(Term::SlsclJoint).then_some(joint_mus.as_slice()),
            cl.tau_prime,
        )?;
        if let Some(t) = i_term {
            per_term[Term::SlsclIntent.index()].push(t);
        }
        if let Some(t) = j_term {
            per_term[Term::SlsclJoint.index()].push(t);
        }

        // view-anchor supervised terms against the source queue role
        let (i_term, j_term) = sentence_scl_pair(
            tape,
            item.view.h_cls,
            &snap.u,
            &norms.u,
            on(Term::ClsclIntent).then_some(intent_mus.as_slice()),
            on(Term::ClsclJoint).then_some(joint_mus.as_slice()),
            cl.tau_prime,
        )?;
        if let Some(t) = i_term {
            per_term[Term::ClsclIntent.index()].push(t);
        }
        if let Some(t) = j_term {
            per_term[Term::ClsclJoint.index()].push(t);
        }

        // view-anchor supervised terms against the view queue role
        let (i_term, j_term) = sentence_scl_pair(
            tape,
            item.view.h_cls,
            &snap.u_ml,
            &norms.u_ml,
            on(Term::MlsclIntent).then_some(intent_mus.as_slice()),
            on(Term::MlsclJoint).then_some(joint_mus.as_slice()),
            cl.tau_prime,
        )?;
        if let Some(t) = i_term {
            per_term[Term::MlsclIntent.index()].push(t);
        }
        if let Some(t) = j_term {
            per_term[Term::MlsclJoint.index()].push(t);
        }

        // token-level supervised terms
        if on(Term::SlsclSlot) {
            let anchors: Vec<(NodeId, &[f64])> = item
                .src
                .words
                .iter()
                .zip(&item.slot_onehots)
                .map(|(&w, l)| (w, l.as_slice()))
                .collect();
            let mut anchor_norms = Vec::with_capacity(anchors.len());
            for (a, _) in &anchors {
                anchor_norms.push(tape.norm(*a)?);
            }
            per_term[Term::SlsclSlot.index()].push(scl_tokens_cached(
                tape,
                &anchors,
                &anchor_norms,
                &w_candidates,
                &norms.w_flat,
                mu_checked,
                cl.tau_prime,
                skip_o,
            )?);
        }
        if on(Term::ClsclSlot) || on(Term::MlsclSlot) {
            let anchors: Vec<(NodeId, &[f64])> = item
                .view
                .words
                .iter()
                .zip(&item.slot_onehots)
                .map(|(&w, l)| (w, l.as_slice()))
                .collect();
            let mut anchor_norms = Vec::with_capacity(anchors.len());
            for (a, _) in &anchors {
                anchor_norms.push(tape.norm(*a)?);
            }
            if on(Term::ClsclSlot) {
                per_term[Term::ClsclSlot.index()].push(scl_tokens_cached(
                    tape,
                    &anchors,
                    &anchor_norms,
                    &w_candidates,
                    &norms.w_flat,
                    mu_checked,
                    cl.tau_prime,
                    skip_o,
                )?);
            }
            if on(Term::MlsclSlot) {
                per_term[Term::MlsclSlot.index()].push(scl_tokens_cached(
                    tape,
                    &anchors,
                    &anchor_norms,
                    &w_ml_candidates,
                    &norms.w_ml_flat,
                    mu_checked,
                    cl.tau_prime,
                    skip_o,
                )?);
            }
        }
    }

    // batch means per term (gated-off terms are exactly zero)
    let mut term_nodes = Vec::with_capacity(14);
    let mut term_values = [0.0_f64; 14];
    for t in Term::ALL {
        let items = &per_term[t.index()];
        let node = if items.is_empty() {
            tape.scalar_const(0.0)
        } else {
            let stacked = tape.from_scalars(items)?;
            tape.mean(stacked)?
        };
        let value = tape.item(node);
        if !value.is_finite() {
            return Err(LossError::NonFiniteTerm { term: t.name() });
        }
        term_values[t.index()] = value;
        term_nodes.push(node);
    }

    let term_weights: Vec<f64> = Term::ALL.iter().map(|&t| term_weight(weights, t)).collect();
    let stacked = tape.from_scalars(&term_nodes)?;
    let total = tape.weighted_sum(stacked, term_weights)?;
    let total_value = tape.item(total);
    if !total_value.is_finite() {
        return Err(LossError::NonFiniteTerm { term: "total" });
    }
    Ok((
        total,
        LossBreakdown {
            terms: term_values,
            total: total_value,
        },
    ))
}
