//! Finite-difference verification of every loss term on random
//! micro-instances (d = 4, n <= 3, K = 3).
//!
//! Each instance freezes its queue contents and decoder weights as tape
//! constants and differentiates w.r.t. the anchor-side representations,
//! mirroring how the terms behave inside a training step.

use super::{intent_ce, scl_sentence, scl_tokens, slot_ce, unsup_gis, unsup_intent, unsup_slot};
use super::{CLConfig, LossError, Result, Term};
use crate::labels::{self, LabelSpace};
use crate::numerics::{finite_diff_check_multi, NodeId, Tape, Tensor};
use crate::seed;
use rand::Rng;

const DIM: usize = 4;
const QUEUE_LEN: usize = 3;
const NUM_INTENTS: usize = 3;
const NUM_SLOTS: usize = 4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct TermReport {
    pub term: Term,
    pub trials: usize,
    pub worst_error: f64,
    pub tolerance: f64,
}

impl TermReport {
    pub fn passed(&self) -> bool {
        self.worst_error < self.tolerance
    }
}

fn rand_vec(rng: &mut impl Rng) -> Tensor {
    Tensor::vector((0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn rand_words(n: usize, rng: &mut impl Rng) -> Vec<Tensor> {
    (0..n).map(|_| rand_vec(rng)).collect()
}

fn micro_space() -> LabelSpace {
    LabelSpace::new(
        (0..NUM_INTENTS).map(|i| format!("i{i}")).collect(),
        {
            let mut slots = vec!["O".to_string()];
            slots.extend((1..NUM_SLOTS).map(|s| format!("s{s}")));
            slots
        },
        "O",
    )
    .unwrap()
}

struct QueueFixture {
    u: Vec<Tensor>,
    u_ml: Vec<Tensor>,
    w: Vec<Vec<Tensor>>,
    w_ml: Vec<Vec<Tensor>>,
    intent_onehots: Vec<Vec<f64>>,
    slot_onehots: Vec<Vec<Vec<f64>>>,
    joints: Vec<Vec<f64>>,
}

fn queue_fixture(
    space: &LabelSpace,
    anchor_intent: usize,
    anchor_slots: &[usize],
    rng: &mut impl Rng,
) -> QueueFixture {
    let mut fx = QueueFixture {
        u: Vec::new(),
        u_ml: Vec::new(),
        w: Vec::new(),
        w_ml: Vec::new(),
        intent_onehots: Vec::new(),
        slot_onehots: Vec::new(),
        joints: Vec::new(),
    };
    for k in 0..QUEUE_LEN {
        let n_k = 1 + rng.gen_range(0..3);
        // entry 0 shares the anchor's labels so every supervised term has
        // at least one positive
        let intent = if k == 0 {
            anchor_intent
        } else {
            rng.gen_range(0..NUM_INTENTS)
        };
        let slots: Vec<usize> = (0..n_k)
            .map(|j| {
                if k == 0 && j == 0 {
                    anchor_slots[0]
                } else {
                    rng.gen_range(0..NUM_SLOTS)
                }
            })
            .collect();
        fx.u.push(rand_vec(rng));
        fx.u_ml.push(rand_vec(rng));
        fx.w.push(rand_words(n_k, rng));
        fx.w_ml.push(rand_words(n_k, rng));
        fx.intent_onehots.push(labels::one_hot(intent, NUM_INTENTS));
        fx.slot_onehots.push(
            slots
                .iter()
                .map(|&s| labels::one_hot(s, NUM_SLOTS))
                .collect(),
        );
        fx.joints.push(labels::joint_label(intent, &slots, space).0);
    }
    fx
}

fn register_role(tape: &mut Tape, role: &[Tensor]) -> Vec<NodeId> {
    role.iter().map(|t| tape.constant(t.clone())).collect()
}

fn register_words(tape: &mut Tape, role: &[Vec<Tensor>]) -> Vec<Vec<NodeId>> {
    role.iter().map(|ws| register_role(tape, ws)).collect()
}

fn flat_candidates<'a>(
    nodes: &[Vec<NodeId>],
    labels: &'a [Vec<Vec<f64>>],
) -> Vec<(NodeId, &'a [f64])> {
    let mut out = Vec::new();
    for (entry, entry_labels) in nodes.iter().zip(labels) {
        for (&w, l) in entry.iter().zip(entry_labels) {
            out.push((w, l.as_slice()));
        }
    }
    out
}

/// Worst finite-difference relative error for one term over `trials`
/// random micro-instances.
pub fn check_term(term: Term, trials: usize, root_seed: u64, cl: &CLConfig) -> Result<TermReport> {
    let space = micro_space();
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let mut rng = seed::stream(
            root_seed,
            "grad-check",
            &[term.index() as u64, trial as u64],
        );
        let n = 1 + rng.gen_range(0..3);
        let anchor_intent = rng.gen_range(0..NUM_INTENTS);
        let anchor_slots: Vec<usize> = (0..n).map(|_| rng.gen_range(0..NUM_SLOTS)).collect();
        let fx = queue_fixture(&space, anchor_intent, &anchor_slots, &mut rng);
        let anchor_intent_onehot = labels::one_hot(anchor_intent, NUM_INTENTS);
        let anchor_slot_onehots: Vec<Vec<f64>> = anchor_slots
            .iter()
            .map(|&s| labels::one_hot(s, NUM_SLOTS))
            .collect();
        let anchor_joint = labels::joint_label(anchor_intent, &anchor_slots, &space).0;
        let intent_mus: Vec<f64> = fx
            .intent_onehots
            .iter()
            .map(|q| labels::mu(&anchor_intent_onehot, q))
            .collect::<std::result::Result<_, _>>()?;
        let joint_mus: Vec<f64> = fx
            .joints
            .iter()
            .map(|q| labels::mu(&anchor_joint, q))
            .collect::<std::result::Result<_, _>>()?;

        let tau = cl.tau;
        let tau_prime = cl.tau_prime;
        let err = match term {
            Term::CeIntent => {
                let decoder_w = Tensor::from_fn(NUM_INTENTS, DIM, |_, _| rng.gen_range(-1.0..1.0));
                let decoder_b = rand_vec_len(NUM_INTENTS, &mut rng);
                let gold = anchor_intent;
                finite_diff_check_multi(
                    move |tape, ids| {
                        let w = tape.constant(decoder_w.clone());
                        let b = tape.constant(decoder_b.clone());
                        let logits = tape.matvec(w, ids[0])?;
                        let logits = tape.add(logits, b)?;
                        let probs = tape.softmax(logits)?;
                        intent_ce(tape, probs, gold)
                    },
                    &[rand_vec(&mut rng)],
                    DEFAULT_STEP,
                )?
            }
            Term::CeSlot => {
                let decoder_w = Tensor::from_fn(NUM_SLOTS, DIM, |_, _| rng.gen_range(-1.0..1.0));
                let decoder_b = rand_vec_len(NUM_SLOTS, &mut rng);
                let golds = anchor_slots.clone();
                finite_diff_check_multi(
                    move |tape, ids| {
                        let w = tape.constant(decoder_w.clone());
                        let b = tape.constant(decoder_b.clone());
                        let mut probs = Vec::with_capacity(ids.len());
                        for &id in ids {
                            let logits = tape.matvec(w, id)?;
                            let logits = tape.add(logits, b)?;
                            probs.push(tape.softmax(logits)?);
                        }
                        slot_ce(tape, &probs, &golds)
                    },
                    &rand_words(n, &mut rng),
                    DEFAULT_STEP,
                )?
            }
            Term::UnIntent => {
                let (u, u_ml) = (fx.u.clone(), fx.u_ml.clone());
                finite_diff_check_multi(
                    move |tape, ids| {
                        let qu = register_role(tape, &u);
                        let qm = register_role(tape, &u_ml);
                        unsup_intent(tape, ids[0], ids[1], &qu, &qm, tau)
                    },
                    &[rand_vec(&mut rng), rand_vec(&mut rng)],
                    DEFAULT_STEP,
                )?
            }
            Term::UnSlot => {
                let (w, w_ml) = (fx.w.clone(), fx.w_ml.clone());
                let strict = cl.strict_pairing;
                let mut leaves = rand_words(n, &mut rng);
                leaves.extend(rand_words(n, &mut rng));
                finite_diff_check_multi(
                    move |tape, ids| {
                        let qw = register_words(tape, &w);
                        let qm = register_words(tape, &w_ml);
                        unsup_slot(tape, &ids[..n], &ids[n..], &qw, &qm, tau, strict)
                    },
                    &leaves,
                    DEFAULT_STEP,
                )?
            }
            Term::UnGis => {
                let (w, w_ml) = (fx.w.clone(), fx.w_ml.clone());
                let mut leaves = vec![rand_vec(&mut rng)];
                leaves.extend(rand_words(n, &mut rng));
                leaves.extend(rand_words(n, &mut rng));
                finite_diff_check_multi(
                    move |tape, ids| {
                        let qw = register_words(tape, &w);
                        let qm = register_words(tape, &w_ml);
                        unsup_gis(tape, ids[0], &ids[1..1 + n], &ids[1 + n..], &qw, &qm, tau)
                    },
                    &leaves,
                    DEFAULT_STEP,
                )?
            }
            Term::SlsclIntent | Term::ClsclIntent | Term::MlsclIntent => {
                let reps = if term == Term::MlsclIntent {
                    fx.u_ml.clone()
                } else {
                    fx.u.clone()
                };
                let mus = intent_mus.clone();
                finite_diff_check_multi(
                    move |tape, ids| {
                        let q = register_role(tape, &reps);
                        scl_sentence(tape, ids[0], &q, &mus, tau_prime)
                    },
                    &[rand_vec(&mut rng)],
                    DEFAULT_STEP,
                )?
            }
            Term::SlsclJoint | Term::ClsclJoint | Term::MlsclJoint => {
                let reps = if term == Term::MlsclJoint {
                    fx.u_ml.clone()
                } else {
                    fx.u.clone()
                };
                let mus = joint_mus.clone();
                finite_diff_check_multi(
                    move |tape, ids| {
                        let q = register_role(tape, &reps);
                        scl_sentence(tape, ids[0], &q, &mus, tau_prime)
                    },
                    &[rand_vec(&mut rng)],
                    DEFAULT_STEP,
                )?
            }
            Term::SlsclSlot | Term::ClsclSlot | Term::MlsclSlot => {
                let role = if term == Term::MlsclSlot {
                    fx.w_ml.clone()
                } else {
                    fx.w.clone()
                };
                let cand_labels = fx.slot_onehots.clone();
                let anchor_labels = anchor_slot_onehots.clone();
                let skip = if cl.include_o_anchors {
                    None
                } else {
                    Some(space.o_index)
                };
                finite_diff_check_multi(
                    move |tape, ids| {
                        let nodes = register_words(tape, &role);
                        let candidates = flat_candidates(&nodes, &cand_labels);
                        let anchors: Vec<(NodeId, &[f64])> = ids
                            .iter()
                            .zip(&anchor_labels)
                            .map(|(&id, l)| (id, l.as_slice()))
                            .collect();
                        scl_tokens(tape, &anchors, &candidates, labels::mu, tau_prime, skip)
                    },
                    &rand_words(n, &mut rng),
                    DEFAULT_STEP,
                )?
            }
        };
        worst = worst.max(err);
    }
    Ok(TermReport {
        term,
        trials,
        worst_error: worst,
        tolerance: DEFAULT_TOLERANCE,
    })
}

fn rand_vec_len(len: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::vector((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Run the whole suite. Errors abort; per-term pass/fail lives in the
/// reports.
pub fn check_all(trials: usize, root_seed: u64, cl: &CLConfig) -> Result<Vec<TermReport>> {
    Term::ALL
        .into_iter()
        .map(|t| check_term(t, trials, root_seed, cl))
        .collect()
}

#[allow(dead_code)]
fn _error_variant_exists() -> Option<LossError> {
    None
}
