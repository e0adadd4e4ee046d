//! Label algebra: one-hot encodings, the sentence-level joint-task label,
//! and the similarity weight `mu` that drives supervised contrastive terms.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid label space: {0}")]
    InvalidSpace(String),
    #[error("reading label manifest {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing label manifest {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

/// Named intent and slot label sets. `o_index` marks the slot tag that
/// carries no entity semantics and is excluded from sentence-level summaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub intents: Vec<String>,
    pub slots: Vec<String>,
    pub o_index: usize,
}

impl LabelSpace {
    pub fn new(intents: Vec<String>, slots: Vec<String>, o_slot: &str) -> Result<Self, LabelError> {
        let o_index = slots.iter().position(|s| s == o_slot).ok_or_else(|| {
            LabelError::InvalidSpace(format!("O slot {o_slot:?} not in slot list"))
        })?;
        Ok(LabelSpace {
            intents,
            slots,
            o_index,
        })
    }

    pub fn num_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn intent_id(&self, name: &str) -> Option<usize> {
        self.intents.iter().position(|i| i == name)
    }

    pub fn slot_id(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == name)
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        #[derive(Deserialize)]
        struct Manifest {
            intents: Vec<String>,
            slots: Vec<String>,
            o_slot: String,
        }
        let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let m: Manifest = serde_json::from_str(&text).map_err(|source| LabelError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(m.intents, m.slots, &m.o_slot)
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        let m = serde_json::json!({
            "intents": self.intents,
            "slots": self.slots,
            "o_slot": self.slots[self.o_index],
        });
        std::fs::write(
            path,
            format!("{}\n", serde_json::to_string_pretty(&m).unwrap()),
        )
        .map_err(|source| LabelError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Sentence-level joint-task label: one-hot intent block followed by the
/// normalized non-O slot summary. Sums to 2 when the utterance has at
/// least one non-O slot, and to 1 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLabel(pub Vec<f64>);

impl JointLabel {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Mean of one-hot slot vectors over non-O positions; the all-zero vector
/// when every position is O. The O entry is always 0.
pub fn sentence_slot_label(slots: &[usize], space: &LabelSpace) -> Vec<f64> {
    let mut v = vec![0.0; space.num_slots()];
    let mut count = 0usize;
    for &s in slots {
        if s != space.o_index {
            v[s] += 1.0;
            count += 1;
        }
    }
    if count > 0 {
        for x in &mut v {
            *x /= count as f64;
        }
    }
    v
}

/// Concatenation of the one-hot intent and the sentence-level slot summary.
pub fn joint_label(intent: usize, slots: &[usize], space: &LabelSpace) -> JointLabel {
    let mut v = one_hot(intent, space.num_intents());
    v.extend(sentence_slot_label(slots, space));
    JointLabel(v)
}

/// Label similarity: the scalar reduction (sum) of the elementwise product.
/// Equals 0 or 1 for one-hot inputs and grades smoothly for joint labels.
pub fn mu(a: &[f64], b: &[f64]) -> Result<f64, LabelError> {
    if a.len() != b.len() {
        return Err(LabelError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(num_intents: usize, num_slots: usize) -> LabelSpace {
        let intents = (0..num_intents).map(|i| format!("intent{i}")).collect();
        let mut slots = vec!["O".to_string()];
        slots.extend((1..num_slots).map(|i| format!("slot{i}")));
        LabelSpace::new(intents, slots, "O").unwrap()
    }

    #[test]
    fn slot_summary_matches_figure_example() {
        // Two non-O slots out of four positions, C_S = 10: 0.5 at each.
        let sp = space(4, 10);
        let v = sentence_slot_label(&[0, 3, 7, 0], &sp);
        let mut expected = vec![0.0; 10];
        expected[3] = 0.5;
        expected[7] = 0.5;
        assert_eq!(v, expected);
    }

    #[test]
    fn slot_summary_all_o_is_zero_vector() {
        let sp = space(4, 10);
        assert_eq!(sentence_slot_label(&[0, 0, 0], &sp), vec![0.0; 10]);
    }

    #[test]
    fn slot_summary_counts_repeats() {
        let sp = space(4, 10);
        let v = sentence_slot_label(&[2, 2, 5], &sp);
        assert!((v[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v[5] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.iter().filter(|x| **x > 0.0).count(), 2);
    }

    #[test]
    fn joint_label_concatenates_intent_then_slots() {
        let sp = space(4, 10);
        let j = joint_label(1, &[0, 3, 7, 0], &sp);
        assert_eq!(j.0.len(), 14);
        assert_eq!(j.0[1], 1.0);
        assert_eq!(j.0[4 + 3], 0.5);
        assert_eq!(j.0[4 + 7], 0.5);
        let total: f64 = j.0.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn joint_label_all_o_sums_to_one() {
        let sp = space(4, 10);
        let j = joint_label(0, &[0, 0], &sp);
        let total: f64 = j.0.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_label_sum_is_two_iff_non_o_present() {
        // Exhaustive over all slot patterns of length <= 4 with C_S = 5.
        let sp = space(3, 5);
        for len in 1..=4usize {
            let mut pattern = vec![0usize; len];
            loop {
                let j = joint_label(1, &pattern, &sp);
                let total: f64 = j.0.iter().sum();
                let has_non_o = pattern.iter().any(|&s| s != sp.o_index);
                let expected = if has_non_o { 2.0 } else { 1.0 };
                assert!(
                    (total - expected).abs() < 1e-12,
                    "pattern {pattern:?} sums to {total}"
                );
                // next pattern in base-C_S counting
                let mut pos = 0;
                loop {
                    if pos == len {
                        break;
                    }
                    pattern[pos] += 1;
                    if pattern[pos] < sp.num_slots() {
                        break;
                    }
                    pattern[pos] = 0;
                    pos += 1;
                }
                if pos == len {
                    break;
                }
            }
        }
    }

    #[test]
    fn mu_one_hot_cases() {
        let a = one_hot(2, 5);
        let b = one_hot(2, 5);
        let c = one_hot(3, 5);
        assert_eq!(mu(&a, &b).unwrap(), 1.0);
        assert_eq!(mu(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn mu_graded_joint_example() {
        // Shared intent and one shared 0.5-weight slot entry: 1 + 0.25.
        let sp = space(4, 10);
        let a = joint_label(1, &[0, 3, 7, 0], &sp);
        let b = joint_label(1, &[3, 9, 0, 0], &sp);
        let m = mu(a.as_slice(), b.as_slice()).unwrap();
        assert!((m - 1.25).abs() < 1e-12);
    }

    #[test]
    fn mu_rejects_length_mismatch() {
        assert!(mu(&[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn mu_self_similarity_dominates_for_one_hots() {
        // for one-hot a and any b with entries in [0,1]:
        // mu(a,a) = 1 >= mu(a,b) = b[i]
        let mut rng = crate::seed::stream(3, "mu-dominance", &[]);
        use rand::Rng;
        for _ in 0..1000 {
            let len = 2 + rng.gen_range(0..6);
            let a = one_hot(rng.gen_range(0..len), len);
            let b: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..=1.0)).collect();
            assert!(mu(&a, &a).unwrap() >= mu(&a, &b).unwrap());
        }
    }

    #[test]
    fn intent_block_is_one_hot_for_any_input() {
        let sp = space(5, 7);
        for intent in 0..5 {
            let j = joint_label(intent, &[1, 2, 0], &sp);
            for (i, v) in j.0[..5].iter().enumerate() {
                assert_eq!(*v, if i == intent { 1.0 } else { 0.0 });
            }
        }
    }
}
