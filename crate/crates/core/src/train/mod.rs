//! End-to-end training: encode both views, compute the composite loss,
//! step the optimizer, then enqueue the batch's detached representations.

mod metrics;
mod optim;

pub use metrics::{bio_spans, evaluate, predict, score, Metrics, Span, SpanCounts};
pub use optim::{OptimizerKind, OptimizerState};

use crate::corpus::{code_switch_with_rng, Corpus, CorpusError, Lexicon, Utterance};
use crate::encoder::{encode, EncoderConfig, EncoderParams, Vocab};
use crate::labels::LabelSpace;
use crate::losses::{
    self, BatchItem, CLConfig, LossBreakdown, LossError, LossWeights, Term, TermGates,
};
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::queues::{QueueEntry, SampleQueues};
use crate::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which loss terms a run trains with; every mode is a mask over the
/// composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    OnlyUcl,
    OnlyScl,
    DropSlscl,
    DropClscl,
    DropMlscl,
    DropIntentScl,
    DropSlotScl,
    DropJointScl,
}

impl AblationMode {
    pub const ALL: [AblationMode; 9] = [
        AblationMode::Full,
        AblationMode::OnlyUcl,
        AblationMode::OnlyScl,
        AblationMode::DropSlscl,
        AblationMode::DropClscl,
        AblationMode::DropMlscl,
        AblationMode::DropIntentScl,
        AblationMode::DropSlotScl,
        AblationMode::DropJointScl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::OnlyUcl => "only_ucl",
            AblationMode::OnlyScl => "only_scl",
            AblationMode::DropSlscl => "drop_slscl",
            AblationMode::DropClscl => "drop_clscl",
            AblationMode::DropMlscl => "drop_mlscl",
            AblationMode::DropIntentScl => "drop_intent_scl",
            AblationMode::DropSlotScl => "drop_slot_scl",
            AblationMode::DropJointScl => "drop_joint_scl",
        }
    }

    pub fn gates(self) -> TermGates {
        let all = TermGates::all_on();
        match self {
            AblationMode::Full => all,
            AblationMode::OnlyUcl => all.without(&[
                Term::SlsclIntent,
                Term::SlsclSlot,
                Term::SlsclJoint,
                Term::ClsclIntent,
                Term::ClsclSlot,
                Term::ClsclJoint,
                Term::MlsclIntent,
                Term::MlsclSlot,
                Term::MlsclJoint,
            ]),
            AblationMode::OnlyScl => all.without(&[Term::UnIntent, Term::UnSlot, Term::UnGis]),
            AblationMode::DropSlscl => {
                all.without(&[Term::SlsclIntent, Term::SlsclSlot, Term::SlsclJoint])
            }
            AblationMode::DropClscl => {
                all.without(&[Term::ClsclIntent, Term::ClsclSlot, Term::ClsclJoint])
            }
            AblationMode::DropMlscl => {
                all.without(&[Term::MlsclIntent, Term::MlsclSlot, Term::MlsclJoint])
            }
            AblationMode::DropIntentScl => {
                all.without(&[Term::SlsclIntent, Term::ClsclIntent, Term::MlsclIntent])
            }
            AblationMode::DropSlotScl => {
                all.without(&[Term::SlsclSlot, Term::ClsclSlot, Term::MlsclSlot])
            }
            AblationMode::DropJointScl => {
                all.without(&[Term::SlsclJoint, Term::ClsclJoint, Term::MlsclJoint])
            }
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown ablation {s:?}; expected one of: {}",
                    AblationMode::ALL.map(|m| m.name()).join(", ")
                )
            })
    }
}

/// Code-switching knobs used during training (the seed comes from the run
/// root via the `code-switch` substream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwitchConfig {
    pub p: f64,
    pub target_langs: Vec<String>,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            p: 0.5,
            target_langs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub cl: CLConfig,
    pub encoder: EncoderConfig,
    pub switch: SwitchConfig,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub ablation: AblationMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            cl: CLConfig::default(),
            encoder: EncoderConfig::default(),
            switch: SwitchConfig::default(),
            queue_capacity: 16,
            batch_size: 32,
            epochs: 30,
            optimizer: OptimizerKind::default(),
            ablation: AblationMode::Full,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch size must be >= 1".into());
        }
        self.weights.validate()?;
        self.cl.validate()?;
        self.encoder.validate()?;
        self.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.switch.p) {
            return Err(format!(
                "switch probability must be in [0,1], got {}",
                self.switch.p
            ));
        }
        if self.switch.p > 0.0 && self.switch.target_langs.is_empty() {
            return Err("code-switching needs at least one target language".into());
        }
        Ok(())
    }
}

/// Mutable training-loop state.
pub struct TrainState {
    pub params: EncoderParams,
    pub queues: SampleQueues,
    pub optimizer: OptimizerState,
    pub epoch: u64,
    pub step: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig, vocab: &Vocab, space: &LabelSpace) -> TrainState {
        let mut init_rng = seed::stream(config.seed, "init", &[]);
        let params = EncoderParams::init(&config.encoder, vocab, space, &mut init_rng);
        let optimizer = OptimizerState::new(config.optimizer, &params);
        TrainState {
            params,
            queues: SampleQueues::new(config.queue_capacity),
            optimizer,
            epoch: 0,
            step: 0,
        }
    }
}

/// Everything immutable a step needs.
pub struct TrainCtx<'a> {
    pub config: &'a TrainConfig,
    pub vocab: &'a Vocab,
    pub space: &'a LabelSpace,
    pub lexicon: &'a Lexicon,
}

/// One optimizer step over a batch: encode source and code-switched views
/// (train mode), compute the composite loss against the current queue
/// snapshot, backpropagate, update parameters, then enqueue the batch's
/// detached representations and labels.
pub fn train_step(
    state: &mut TrainState,
    batch: &[Utterance],
    ctx: &TrainCtx,
) -> Result<LossBreakdown> {
    let config = ctx.config;
    let mut switch_rng = seed::stream(config.seed, "code-switch", &[state.epoch, state.step]);
    let mut dropout_rng = seed::stream(config.seed, "dropout", &[state.epoch, state.step]);

    let mut tape = Tape::new();
    let nodes = state.params.register(&mut tape);
    let mut items = Vec::with_capacity(batch.len());
    for u in batch {
        let view = code_switch_with_rng(
            u,
            ctx.lexicon,
            config.switch.p,
            &config.switch.target_langs,
            &mut switch_rng,
        );
        let src_enc = encode(
            &mut tape,
            &nodes,
            &config.encoder,
            ctx.vocab,
            u,
            true,
            Some(&mut dropout_rng),
        )?;
        let view_enc = encode(
            &mut tape,
            &nodes,
            &config.encoder,
            ctx.vocab,
            &view,
            true,
            Some(&mut dropout_rng),
        )?;
        items.push(BatchItem::new(
            src_enc,
            view_enc,
            u.intent,
            u.slots.clone(),
            ctx.space,
        ));
    }

    let snapshot = state.queues.snapshot();
    let gates = config.ablation.gates();
    let (total, breakdown) = losses::total_loss(
        &mut tape,
        &nodes,
        &items,
        &snapshot,
        &config.weights,
        &gates,
        &config.cl,
        ctx.space.o_index,
    )?;

    let grads = tape.backward(total)?;
    let grad_tensors: Vec<Tensor> = nodes
        .named()
        .into_iter()
        .zip(state.params.named_blocks())
        .map(|((_, node), (_, block))| grads.get_or_zeros(node, block.shape()))
        .collect();

    // detach this step's representations before touching the parameters
    let entries: Vec<QueueEntry> = items
        .iter()
        .map(|item| QueueEntry {
            h_cls: tape.value(item.src.h_cls).clone(),
            words: item
                .src
                .words
                .iter()
                .map(|&w| tape.value(w).clone())
                .collect(),
            ml_h_cls: tape.value(item.view.h_cls).clone(),
            ml_words: item
                .view
                .words
                .iter()
                .map(|&w| tape.value(w).clone())
                .collect(),
            intent_onehot: item.intent_onehot.clone(),
            slot_onehots: item.slot_onehots.clone(),
            joint: item.joint.clone(),
        })
        .collect();

    state.optimizer.step(&mut state.params, &grad_tensors);
    state.queues.enqueue_batch(entries);
    state.step += 1;
    Ok(breakdown)
}

/// Per-epoch mean of each loss term over the epoch's steps.
#[derive(Debug, Clone, Serialize)]
pub struct EpochCurve {
    pub epoch: usize,
    pub terms: [f64; 14],
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub per_lang: Vec<(String, Metrics)>,
    pub mean_overall: f64,
}

pub struct FitResult {
    pub best_params: EncoderParams,
    /// Epoch the best checkpoint came from (0 = initialization).
    pub best_epoch: usize,
    pub curves: Vec<EpochCurve>,
    pub history: Vec<EpochMetrics>,
}

fn mean_overall(per_lang: &[(String, Metrics)]) -> f64 {
    if per_lang.is_empty() {
        return 0.0;
    }
    per_lang
        .iter()
        .map(|(_, m)| m.overall_accuracy)
        .sum::<f64>()
        / per_lang.len() as f64
}

/// Run the full loop: seeded shuffles, batches without replacement,
/// per-epoch evaluation on every dev corpus, best checkpoint by mean
/// overall accuracy.
pub fn fit(
    config: &TrainConfig,
    train_corpus: &Corpus,
    dev: &[(String, Corpus)],
    lexicon: &Lexicon,
    vocab: &Vocab,
) -> Result<FitResult> {
    config.validate().map_err(TrainError::Config)?;
    let space = &train_corpus.space;
    let mut state = TrainState::new(config, vocab, space);
    let ctx = TrainCtx {
        config,
        vocab,
        space,
        lexicon,
    };

    let mut best_params = state.params.clone();
    let mut best_epoch = 0usize;
    let mut curves = Vec::with_capacity(config.epochs);
    let mut history = Vec::with_capacity(config.epochs);

    // epoch 0 = initialization; it participates in best-checkpoint
    // selection so epochs=0 returns the initial parameters
    let initial: Vec<(String, Metrics)> = dev
        .iter()
        .map(|(lang, corpus)| {
            Ok((
                lang.clone(),
                evaluate(&state.params, &config.encoder, vocab, corpus)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut best_score = mean_overall(&initial);

    let mut order: Vec<usize> = (0..train_corpus.examples.len()).collect();
    for epoch in 1..=config.epochs {
        state.epoch = epoch as u64;
        state.step = 0;
        let mut shuffle_rng = seed::stream(config.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut term_sums = [0.0_f64; 14];
        let mut total_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Utterance> = chunk
                .iter()
                .map(|&i| train_corpus.examples[i].clone())
                .collect();
            let breakdown = train_step(&mut state, &batch, &ctx)?;
            for (acc, term) in term_sums.iter_mut().zip(breakdown.terms) {
                *acc += term;
            }
            total_sum += breakdown.total;
            steps += 1;
        }
        let denom = steps.max(1) as f64;
        curves.push(EpochCurve {
            epoch,
            terms: term_sums.map(|s| s / denom),
            total: total_sum / denom,
        });

        let per_lang: Vec<(String, Metrics)> = dev
            .iter()
            .map(|(lang, corpus)| {
                Ok((
                    lang.clone(),
                    evaluate(&state.params, &config.encoder, vocab, corpus)?,
                ))
            })
            .collect::<Result<_>>()?;
        let score = mean_overall(&per_lang);
        history.push(EpochMetrics {
            epoch,
            per_lang,
            mean_overall: score,
        });
        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            best_params = state.params.clone();
        }
    }

    Ok(FitResult {
        best_params,
        best_epoch,
        curves,
        history,
    })
}

/// Build the vocabulary a run needs: every lexicon word in every language
/// plus every training token.
pub fn build_vocab(train_corpus: &Corpus, lexicon: &Lexicon) -> Vocab {
    let mut words = lexicon.all_words();
    for u in &train_corpus.examples {
        words.extend(u.words.iter().cloned());
    }
    Vocab::build(words)
}

/// Cosine similarity between each utterance's sentence vector and that of
/// its (seeded) code-switched view, in eval mode. The same seed gives the
/// same views, making values comparable across checkpoints.
pub fn view_cosines(
    params: &EncoderParams,
    config: &EncoderConfig,
    vocab: &Vocab,
    corpus: &Corpus,
    lexicon: &Lexicon,
    switch: &SwitchConfig,
    seed_value: u64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(corpus.examples.len());
    for (i, u) in corpus.examples.iter().enumerate() {
        let mut rng = seed::stream(seed_value, "view-cosine", &[i as u64]);
        let view = code_switch_with_rng(u, lexicon, switch.p, &switch.target_langs, &mut rng);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let a = encode(&mut tape, &nodes, config, vocab, u, false, None)?;
        let b = encode(&mut tape, &nodes, config, vocab, &view, false, None)?;
        let cos = tape
            .value(a.h_cls)
            .cosine(tape.value(b.h_cls))
            .map_err(TrainError::Numerics)?;
        out.push(cos);
    }
    Ok(out)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Deterministic helper used by tests and the CLI: draw a batch by index
/// range without shuffling.
pub fn slice_batch(corpus: &Corpus, start: usize, len: usize) -> Vec<Utterance> {
    corpus
        .examples
        .iter()
        .skip(start)
        .take(len)
        .cloned()
        .collect()
}

/// Expected queue fill after the first step.
pub fn expected_queue_len(batch: usize, capacity: usize) -> usize {
    batch.min(capacity)
}

#[allow(dead_code)]
fn _rng_is_used(r: &mut dyn rand::RngCore) -> u32 {
    r.next_u32()
}
