//! Desk-scale trainable encoder and the softmax intent/slot decoders.
//!
//! Word vectors are embedding rows (one token per word); the sentence
//! vector pools them (mean or attention) and passes through a one-hidden-
//! layer MLP with tanh. Everything is recorded on the tape, so gradients
//! flow into every parameter block.

use crate::corpus::Utterance;
use crate::labels::LabelSpace;
use crate::numerics::{NodeId, NumericsError, Result, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub hidden: usize,
    pub pooling: Pooling,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 16,
            hidden: 32,
            pooling: Pooling::Mean,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.dim < 2 {
            return Err(format!("embedding dim must be >= 2, got {}", self.dim));
        }
        if self.hidden == 0 {
            return Err("hidden width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        Ok(())
    }
}

/// Token table; id 0 is the unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK: &str = "<unk>";

impl Vocab {
    /// Sorted, deduplicated vocabulary with `<unk>` at id 0.
    pub fn build<I: IntoIterator<Item = String>>(words: I) -> Vocab {
        let mut list: Vec<String> = words.into_iter().filter(|w| w != UNK).collect();
        list.sort();
        list.dedup();
        let mut all = vec![UNK.to_string()];
        all.extend(list);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words: all, index }
    }

    pub fn from_list(words: Vec<String>) -> Vocab {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    pub fn id(&self, word: &str) -> usize {
        *self.index.get(word).unwrap_or(&0)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

macro_rules! param_blocks {
    ($($field:ident),* $(,)?) => {
        pub const BLOCK_NAMES: &[&str] = &[$(stringify!($field)),*];

        impl EncoderParams {
            pub fn named_blocks(&self) -> Vec<(&'static str, &Tensor)> {
                vec![$((stringify!($field), &self.$field)),*]
            }

            pub fn named_blocks_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
                vec![$((stringify!($field), &mut self.$field)),*]
            }

            /// Register every block as a differentiable leaf on the tape.
            pub fn register(&self, tape: &mut Tape) -> ParamNodes {
                ParamNodes {
                    $($field: tape.var(self.$field.clone())),*
                }
            }
        }

        impl ParamNodes {
            pub fn named(&self) -> Vec<(&'static str, NodeId)> {
                vec![$((stringify!($field), self.$field)),*]
            }
        }
    };
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embed: Tensor,      // [V, d]
    pub mlp_w1: Tensor,     // [hidden, d]
    pub mlp_b1: Tensor,     // [hidden]
    pub mlp_w2: Tensor,     // [d, hidden]
    pub mlp_b2: Tensor,     // [d]
    pub attn_query: Tensor, // [d]
    pub intent_w: Tensor,   // [C_I, d]
    pub intent_b: Tensor,   // [C_I]
    pub slot_w: Tensor,     // [C_S, d]
    pub slot_b: Tensor,     // [C_S]
}

/// Tape handles for one registration of [`EncoderParams`].
#[derive(Debug, Clone, Copy)]
pub struct ParamNodes {
    pub embed: NodeId,
    pub mlp_w1: NodeId,
    pub mlp_b1: NodeId,
    pub mlp_w2: NodeId,
    pub mlp_b2: NodeId,
    pub attn_query: NodeId,
    pub intent_w: NodeId,
    pub intent_b: NodeId,
    pub slot_w: NodeId,
    pub slot_b: NodeId,
}

param_blocks!(
    embed, mlp_w1, mlp_b1, mlp_w2, mlp_b2, attn_query, intent_w, intent_b, slot_w, slot_b,
);

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
}

impl EncoderParams {
    pub fn init(
        config: &EncoderConfig,
        vocab: &Vocab,
        space: &LabelSpace,
        rng: &mut impl Rng,
    ) -> EncoderParams {
        let d = config.dim;
        let h = config.hidden;
        let attn_scale = (1.0 / d as f64).sqrt();
        EncoderParams {
            embed: xavier(vocab.len(), d, rng),
            mlp_w1: xavier(h, d, rng),
            mlp_b1: Tensor::zeros(&[h]),
            mlp_w2: xavier(d, h, rng),
            mlp_b2: Tensor::zeros(&[d]),
            attn_query: Tensor::vector(
                (0..d)
                    .map(|_| rng.gen_range(-attn_scale..attn_scale))
                    .collect(),
            ),
            intent_w: xavier(space.num_intents(), d, rng),
            intent_b: Tensor::zeros(&[space.num_intents()]),
            slot_w: xavier(space.num_slots(), d, rng),
            slot_b: Tensor::zeros(&[space.num_slots()]),
        }
    }
}

/// Per-utterance tape handles: one sentence vector plus one vector per word.
/// `pooled` is the pre-MLP pooled vector (the mean of identical word
/// vectors is that vector; `h_cls` adds the MLP on top).
#[derive(Debug, Clone)]
pub struct EncodedUtterance {
    pub h_cls: NodeId,
    pub pooled: NodeId,
    pub words: Vec<NodeId>,
}

/// Encode an utterance. With `train_mode`, inverted dropout is applied to
/// each word vector using draws from `dropout_rng`; evaluation is
/// deterministic and dropout-free.
pub fn encode(
    tape: &mut Tape,
    params: &ParamNodes,
    config: &EncoderConfig,
    vocab: &Vocab,
    u: &Utterance,
    train_mode: bool,
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<EncodedUtterance> {
    if u.words.is_empty() {
        return Err(NumericsError::EmptyInput { op: "encode" });
    }
    let n = u.words.len();
    let d = config.dim;
    let mut words = Vec::with_capacity(n);
    let mut rng = dropout_rng;
    for word in &u.words {
        let mut vec = tape.gather_row(params.embed, vocab.id(word))?;
        if train_mode && config.dropout > 0.0 {
            let rng = rng
                .as_deref_mut()
                .expect("train_mode encoding needs a dropout rng");
            let keep = 1.0 - config.dropout;
            let mask: Vec<f64> = (0..d)
                .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            vec = tape.mul_const(vec, Tensor::vector(mask))?;
        }
        words.push(vec);
    }

    let pooled = match config.pooling {
        Pooling::Mean => {
            let mut acc = words[0];
            for &w in &words[1..] {
                acc = tape.add(acc, w)?;
            }
            tape.scale(acc, 1.0 / n as f64)?
        }
        Pooling::Attention => {
            let scale = 1.0 / (d as f64).sqrt();
            let mut scores = Vec::with_capacity(n);
            for &w in &words {
                let s = tape.dot(params.attn_query, w)?;
                scores.push(tape.scale(s, scale)?);
            }
            let score_vec = tape.from_scalars(&scores)?;
            let alpha = tape.softmax(score_vec)?;
            let mut acc: Option<NodeId> = None;
            for (t, &w) in words.iter().enumerate() {
                let a_t = tape.index(alpha, t)?;
                let contrib = tape.scale_by(w, a_t)?;
                acc = Some(match acc {
                    None => contrib,
                    Some(prev) => tape.add(prev, contrib)?,
                });
            }
            acc.expect("n >= 1")
        }
    };

    let pre = tape.matvec(params.mlp_w1, pooled)?;
    let pre = tape.add(pre, params.mlp_b1)?;
    let hidden = tape.tanh(pre)?;
    let out = tape.matvec(params.mlp_w2, hidden)?;
    let h_cls = tape.add(out, params.mlp_b2)?;

    Ok(EncodedUtterance {
        h_cls,
        pooled,
        words,
    })
}

/// Intent decoder logits: `W_I h + b_I`.
pub fn intent_logits(tape: &mut Tape, params: &ParamNodes, h_cls: NodeId) -> Result<NodeId> {
    let l = tape.matvec(params.intent_w, h_cls)?;
    tape.add(l, params.intent_b)
}

pub fn intent_probs(tape: &mut Tape, params: &ParamNodes, h_cls: NodeId) -> Result<NodeId> {
    let logits = intent_logits(tape, params, h_cls)?;
    tape.softmax(logits)
}

/// Slot decoder logits for one word vector: `W_S h_t + b_S`.
pub fn slot_logits(tape: &mut Tape, params: &ParamNodes, word: NodeId) -> Result<NodeId> {
    let l = tape.matvec(params.slot_w, word)?;
    tape.add(l, params.slot_b)
}

pub fn slot_probs(tape: &mut Tape, params: &ParamNodes, word: NodeId) -> Result<NodeId> {
    let logits = slot_logits(tape, params, word)?;
    tape.softmax(logits)
}

/// Versioned parameter checkpoint.
///
/// JSON with explicit shape headers per tensor; `version` gates format
/// evolution. Floats round-trip exactly (shortest-representation printing).
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: EncoderConfig,
    pub space: LabelSpace,
    pub vocab: Vec<String>,
    pub tensors: std::collections::BTreeMap<String, TensorDump>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorDump {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {got:?}, expected {expected:?}")]
    BadShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

pub fn save_checkpoint(
    path: &Path,
    config: &EncoderConfig,
    space: &LabelSpace,
    vocab: &Vocab,
    params: &EncoderParams,
) -> std::result::Result<(), CheckpointError> {
    let tensors = params
        .named_blocks()
        .into_iter()
        .map(|(name, t)| {
            (
                name.to_string(),
                TensorDump {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            )
        })
        .collect();
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        space: space.clone(),
        vocab: vocab.words().to_vec(),
        tensors,
    };
    let mut text = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(
    path: &Path,
) -> std::result::Result<(EncoderConfig, LabelSpace, Vocab, EncoderParams), CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(ckpt.version));
    }
    let vocab = Vocab::from_list(ckpt.vocab);
    let d = ckpt.config.dim;
    let h = ckpt.config.hidden;
    let expected: Vec<(&str, Vec<usize>)> = vec![
        ("embed", vec![vocab.len(), d]),
        ("mlp_w1", vec![h, d]),
        ("mlp_b1", vec![h]),
        ("mlp_w2", vec![d, h]),
        ("mlp_b2", vec![d]),
        ("attn_query", vec![d]),
        ("intent_w", vec![ckpt.space.num_intents(), d]),
        ("intent_b", vec![ckpt.space.num_intents()]),
        ("slot_w", vec![ckpt.space.num_slots(), d]),
        ("slot_b", vec![ckpt.space.num_slots()]),
    ];
    let mut tensors = ckpt.tensors;
    let mut take = |name: &str, shape: &[usize]| {
        let dump = tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if dump.shape != shape {
            return Err(CheckpointError::BadShape {
                name: name.to_string(),
                got: dump.shape,
                expected: shape.to_vec(),
            });
        }
        Tensor::new(dump.shape, dump.data)
            .map_err(|_| CheckpointError::MissingTensor(name.to_string()))
    };
    let params = EncoderParams {
        embed: take("embed", &expected[0].1)?,
        mlp_w1: take("mlp_w1", &expected[1].1)?,
        mlp_b1: take("mlp_b1", &expected[2].1)?,
        mlp_w2: take("mlp_w2", &expected[3].1)?,
        mlp_b2: take("mlp_b2", &expected[4].1)?,
        attn_query: take("attn_query", &expected[5].1)?,
        intent_w: take("intent_w", &expected[6].1)?,
        intent_b: take("intent_b", &expected[7].1)?,
        slot_w: take("slot_w", &expected[8].1)?,
        slot_b: take("slot_b", &expected[9].1)?,
    };
    Ok((ckpt.config, ckpt.space, vocab, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn setup(pooling: Pooling) -> (EncoderConfig, LabelSpace, Vocab, EncoderParams) {
        let config = EncoderConfig {
            dim: 8,
            hidden: 6,
            pooling,
            dropout: 0.1,
        };
        let space = LabelSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["O".into(), "B-x".into(), "I-x".into(), "B-y".into()],
            "O",
        )
        .unwrap();
        let vocab = Vocab::build(["red", "green", "blue", "cyan"].map(String::from));
        let mut rng = seed::stream(11, "init", &[]);
        let params = EncoderParams::init(&config, &vocab, &space, &mut rng);
        (config, space, vocab, params)
    }

    fn utt(words: &[&str]) -> Utterance {
        Utterance {
            words: words.iter().map(|w| w.to_string()).collect(),
            intent: 0,
            slots: vec![0; words.len()],
            lang: "en".into(),
        }
    }

    #[test]
    fn shape_one_vector_per_word_plus_sentence() {
        let (config, _space, vocab, params) = setup(Pooling::Mean);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let enc = encode(
            &mut tape,
            &nodes,
            &config,
            &vocab,
            &utt(&["red", "blue", "red"]),
            false,
            None,
        )
        .unwrap();
        assert_eq!(enc.words.len(), 3);
        assert_eq!(tape.value(enc.h_cls).shape(), &[config.dim]);
        for w in &enc.words {
            assert_eq!(tape.value(*w).shape(), &[config.dim]);
        }
    }

    #[test]
    fn mean_of_identical_words_is_that_vector() {
        let (config, _space, vocab, params) = setup(Pooling::Mean);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let enc = encode(
            &mut tape,
            &nodes,
            &config,
            &vocab,
            &utt(&["red", "red", "red"]),
            false,
            None,
        )
        .unwrap();
        let word = tape.value(enc.words[0]).clone();
        let pooled = tape.value(enc.pooled).clone();
        for (a, b) in word.data().iter().zip(pooled.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_encoding_is_bitwise_deterministic() {
        for pooling in [Pooling::Mean, Pooling::Attention] {
            let (config, _space, vocab, params) = setup(pooling);
            let u = utt(&["green", "cyan", "red", "blue"]);
            let run = || {
                let mut tape = Tape::new();
                let nodes = params.register(&mut tape);
                let enc = encode(&mut tape, &nodes, &config, &vocab, &u, false, None).unwrap();
                tape.value(enc.h_cls).data().to_vec()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let (config, _space, vocab, params) = setup(Pooling::Mean);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let a = encode(
            &mut tape,
            &nodes,
            &config,
            &vocab,
            &utt(&["martian"]),
            false,
            None,
        )
        .unwrap();
        let b = encode(
            &mut tape,
            &nodes,
            &config,
            &vocab,
            &utt(&[UNK]),
            false,
            None,
        )
        .unwrap();
        assert_eq!(tape.value(a.h_cls), tape.value(b.h_cls));
    }

    #[test]
    fn empty_utterance_is_a_contract_error() {
        let (config, _space, vocab, params) = setup(Pooling::Mean);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let empty = Utterance {
            words: vec![],
            intent: 0,
            slots: vec![],
            lang: "en".into(),
        };
        assert!(matches!(
            encode(&mut tape, &nodes, &config, &vocab, &empty, false, None),
            Err(NumericsError::EmptyInput { .. })
        ));
    }

    #[test]
    fn zero_decoder_params_give_uniform_probs() {
        let (config, space, vocab, mut params) = setup(Pooling::Mean);
        params.intent_w = Tensor::zeros(&[space.num_intents(), config.dim]);
        params.intent_b = Tensor::zeros(&[space.num_intents()]);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let enc = encode(
            &mut tape,
            &nodes,
            &config,
            &vocab,
            &utt(&["red", "green"]),
            false,
            None,
        )
        .unwrap();
        let probs = intent_probs(&mut tape, &nodes, enc.h_cls).unwrap();
        for p in tape.value(probs).data() {
            assert!((p - 1.0 / space.num_intents() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn probs_sum_to_one_and_argmax_matches_logits() {
        let (config, _space, vocab, params) = setup(Pooling::Attention);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let enc = encode(
            &mut tape,
            &nodes,
            &config,
            &vocab,
            &utt(&["blue", "cyan"]),
            false,
            None,
        )
        .unwrap();
        for (logits, probs) in [
            (
                intent_logits(&mut tape, &nodes, enc.h_cls).unwrap(),
                intent_probs(&mut tape, &nodes, enc.h_cls).unwrap(),
            ),
            (
                slot_logits(&mut tape, &nodes, enc.words[0]).unwrap(),
                slot_probs(&mut tape, &nodes, enc.words[0]).unwrap(),
            ),
        ] {
            let lv = tape.value(logits).data().to_vec();
            let pv = tape.value(probs).data().to_vec();
            let sum: f64 = pv.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(&lv), argmax(&pv));
        }
    }

    #[test]
    fn dropout_only_active_in_train_mode() {
        let (mut config, _space, vocab, params) = setup(Pooling::Mean);
        config.dropout = 0.5;
        let u = utt(&["red", "green", "blue"]);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let eval = encode(&mut tape, &nodes, &config, &vocab, &u, false, None).unwrap();
        let mut rng = seed::stream(5, "dropout", &[]);
        let train = encode(&mut tape, &nodes, &config, &vocab, &u, true, Some(&mut rng)).unwrap();
        assert_ne!(tape.value(eval.h_cls), tape.value(train.h_cls));
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let (config, space, vocab, params) = setup(Pooling::Attention);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &config, &space, &vocab, &params).unwrap();
        let (c2, s2, v2, p2) = load_checkpoint(&path).unwrap();
        assert_eq!(c2, config);
        assert_eq!(s2, space);
        assert_eq!(v2, vocab);
        assert_eq!(p2, params);
    }

    #[test]
    fn ce_gradients_through_encode_pass_finite_difference_checks() {
        use crate::numerics::finite_diff_check_multi;
        let (mut config, space, vocab, params) = setup(Pooling::Attention);
        config.dropout = 0.0; // dropout masks are resampled per eval; check the deterministic path
        let u = Utterance {
            words: vec!["red".into(), "green".into(), "blue".into()],
            intent: 2,
            slots: vec![1, 0, 3],
            lang: "en".into(),
        };
        let blocks: Vec<Tensor> = params
            .named_blocks()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let err = finite_diff_check_multi::<_, NumericsError>(
            |tape, ids| {
                let nodes = ParamNodes {
                    embed: ids[0],
                    mlp_w1: ids[1],
                    mlp_b1: ids[2],
                    mlp_w2: ids[3],
                    mlp_b2: ids[4],
                    attn_query: ids[5],
                    intent_w: ids[6],
                    intent_b: ids[7],
                    slot_w: ids[8],
                    slot_b: ids[9],
                };
                let enc = encode(tape, &nodes, &config, &vocab, &u, false, None)?;
                // joint CE: -ln p_intent[gold] + sum_t -ln p_slot[gold_t]
                let ip = intent_probs(tape, &nodes, enc.h_cls)?;
                let ig = tape.index(ip, u.intent)?;
                let il = tape.ln(ig)?;
                let mut total = tape.scale(il, -1.0)?;
                for (t, &w) in enc.words.iter().enumerate() {
                    let sp = slot_probs(tape, &nodes, w)?;
                    let sg = tape.index(sp, u.slots[t])?;
                    let sl = tape.ln(sg)?;
                    let neg = tape.scale(sl, -1.0)?;
                    total = tape.add(total, neg)?;
                }
                Ok(total)
            },
            &blocks,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "worst relative error {err}");
        let _ = space;
    }
}
