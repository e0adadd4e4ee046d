//! Shared fixtures for the integration suites.
#![allow(dead_code)]

pub mod oracle;
pub mod schema;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xslu::encoder::ParamNodes;
use xslu::labels::LabelSpace;
use xslu::numerics::{NodeId, Tape, Tensor};
use xslu::queues::{QueueEntry, SampleQueues};

pub fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {detail}");
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(d: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()
}

pub const DIM: usize = 4;
pub const NUM_INTENTS: usize = 3;
pub const NUM_SLOTS: usize = 4;

pub fn micro_space() -> LabelSpace {
    LabelSpace::new(
        (0..NUM_INTENTS).map(|i| format!("i{i}")).collect(),
        {
            let mut s = vec!["O".to_string()];
            s.extend((1..NUM_SLOTS).map(|k| format!("B-s{k}")));
            s
        },
        "O",
    )
    .unwrap()
}

/// Raw-valued micro-batch shared by the optimized path and the oracle.
pub struct MicroBatch {
    pub space: LabelSpace,
    pub items: Vec<oracle::Item>,
    pub queue: Vec<oracle::Entry>,
    pub intent_w: Vec<Vec<f64>>,
    pub intent_b: Vec<f64>,
    pub slot_w: Vec<Vec<f64>>,
    pub slot_b: Vec<f64>,
}

pub fn random_micro_batch(seed: u64, allow_empty_queue: bool) -> MicroBatch {
    let mut r = rng(seed);
    let space = micro_space();
    let batch_len = 1 + r.gen_range(0..3);
    let queue_len = if allow_empty_queue && r.gen_bool(0.2) {
        0
    } else {
        1 + r.gen_range(0..3)
    };
    let items = (0..batch_len)
        .map(|_| {
            let n = 1 + r.gen_range(0..3);
            oracle::Item {
                src_h: rand_vec(DIM, &mut r),
                src_words: (0..n).map(|_| rand_vec(DIM, &mut r)).collect(),
                view_h: rand_vec(DIM, &mut r),
                view_words: (0..n).map(|_| rand_vec(DIM, &mut r)).collect(),
                intent: r.gen_range(0..NUM_INTENTS),
                slots: (0..n).map(|_| r.gen_range(0..NUM_SLOTS)).collect(),
            }
        })
        .collect();
    let queue = (0..queue_len)
        .map(|_| {
            let n = 1 + r.gen_range(0..3);
            oracle::Entry {
                u: rand_vec(DIM, &mut r),
                u_ml: rand_vec(DIM, &mut r),
                w: (0..n).map(|_| rand_vec(DIM, &mut r)).collect(),
                w_ml: (0..n).map(|_| rand_vec(DIM, &mut r)).collect(),
                intent: r.gen_range(0..NUM_INTENTS),
                slots: (0..n).map(|_| r.gen_range(0..NUM_SLOTS)).collect(),
            }
        })
        .collect();
    let intent_w = (0..NUM_INTENTS).map(|_| rand_vec(DIM, &mut r)).collect();
    let intent_b = rand_vec(NUM_INTENTS, &mut r);
    let slot_w = (0..NUM_SLOTS).map(|_| rand_vec(DIM, &mut r)).collect();
    let slot_b = rand_vec(NUM_SLOTS, &mut r);
    MicroBatch {
        space,
        items,
        queue,
        intent_w,
        intent_b,
        slot_w,
        slot_b,
    }
}

fn matrix(rows: &[Vec<f64>]) -> Tensor {
    let cols = rows[0].len();
    Tensor::new(
        vec![rows.len(), cols],
        rows.iter().flatten().cloned().collect(),
    )
    .unwrap()
}

/// Register the micro-batch on a tape the way a training step would:
/// anchors as vars, queue contents detached, decoder weights as vars.
pub fn stage_micro_batch(
    mb: &MicroBatch,
    tape: &mut Tape,
    scale_reps: f64,
) -> (
    ParamNodes,
    Vec<xslu::losses::BatchItem>,
    xslu::queues::QueueSnapshot,
) {
    let dummy = tape.constant(Tensor::zeros(&[1, 1]));
    let dummy_v = tape.constant(Tensor::zeros(&[1]));
    let params = ParamNodes {
        embed: dummy,
        mlp_w1: dummy,
        mlp_b1: dummy_v,
        mlp_w2: dummy,
        mlp_b2: dummy_v,
        attn_query: dummy_v,
        intent_w: tape.var(matrix(&mb.intent_w)),
        intent_b: tape.var(Tensor::vector(mb.intent_b.clone())),
        slot_w: tape.var(matrix(&mb.slot_w)),
        slot_b: tape.var(Tensor::vector(mb.slot_b.clone())),
    };
    let scaled = |v: &[f64]| Tensor::vector(v.iter().map(|x| x * scale_reps).collect());
    let items = mb
        .items
        .iter()
        .map(|item| {
            let h = tape.var(scaled(&item.src_h));
            let words: Vec<NodeId> = item.src_words.iter().map(|w| tape.var(scaled(w))).collect();
            let vh = tape.var(scaled(&item.view_h));
            let vwords: Vec<NodeId> = item
                .view_words
                .iter()
                .map(|w| tape.var(scaled(w)))
                .collect();
            xslu::losses::BatchItem::new(
                xslu::encoder::EncodedUtterance {
                    h_cls: h,
                    pooled: h,
                    words,
                },
                xslu::encoder::EncodedUtterance {
                    h_cls: vh,
                    pooled: vh,
                    words: vwords,
                },
                item.intent,
                item.slots.clone(),
                &mb.space,
            )
        })
        .collect();
    let mut queues = SampleQueues::new(mb.queue.len().max(1));
    queues.enqueue_batch(
        mb.queue
            .iter()
            .map(|e| QueueEntry {
                h_cls: scaled(&e.u),
                words: e.w.iter().map(|w| scaled(w)).collect(),
                ml_h_cls: scaled(&e.u_ml),
                ml_words: e.w_ml.iter().map(|w| scaled(w)).collect(),
                intent_onehot: xslu::labels::one_hot(e.intent, mb.space.num_intents()),
                slot_onehots: e
                    .slots
                    .iter()
                    .map(|&s| xslu::labels::one_hot(s, mb.space.num_slots()))
                    .collect(),
                joint: xslu::labels::joint_label(e.intent, &e.slots, &mb.space),
            })
            .collect(),
    );
    (params, items, queues.snapshot())
}
