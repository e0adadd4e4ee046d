//! FIFO sample queues of past representations and labels.
//!
//! The six queue roles of the model (source/view sentence vectors,
//! source/view word vectors, intent one-hots, slot one-hots) stay aligned
//! by storing one [`QueueEntry`] per past utterance. Entries hold plain
//! tensors with no tape linkage: enqueueing detaches representations, so
//! no gradient ever flows back into queue contents.

use crate::labels::JointLabel;
use crate::numerics::Tensor;
use std::collections::VecDeque;
use std::sync::Arc;

/// Detached representations and labels of one past utterance (plus its
/// multilingual view, which shares the labels).
#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub h_cls: Tensor,
    pub words: Vec<Tensor>,
    pub ml_h_cls: Tensor,
    pub ml_words: Vec<Tensor>,
    pub intent_onehot: Vec<f64>,
    pub slot_onehots: Vec<Vec<f64>>,
    pub joint: JointLabel,
}

impl QueueEntry {
    /// Alignment invariant: the source words, view words, and slot labels
    /// all describe the same utterance of the same length.
    pub fn is_aligned(&self) -> bool {
        self.words.len() == self.ml_words.len() && self.words.len() == self.slot_onehots.len()
    }
}

/// Bounded FIFO of queue entries, oldest first.
#[derive(Debug, Clone, Default)]
pub struct SampleQueues {
    capacity: usize,
    entries: VecDeque<Arc<QueueEntry>>,
}

impl SampleQueues {
    pub fn new(capacity: usize) -> Self {
        SampleQueues {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append entries in batch order, evicting the oldest past capacity.
    pub fn enqueue_batch(&mut self, batch: Vec<QueueEntry>) {
        for entry in batch {
            debug_assert!(entry.is_aligned());
            self.entries.push_back(Arc::new(entry));
        }
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    /// Immutable view of the current contents; later enqueues do not
    /// affect it. Loss code reads only snapshots.
    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            entries: self.entries.iter().cloned().collect(),
        }
    }
}

/// Stable view over the queue contents at one instant.
#[derive(Debug, Clone)]
pub struct QueueSnapshot {
    entries: Vec<Arc<QueueEntry>>,
}

impl QueueSnapshot {
    pub fn empty() -> Self {
        QueueSnapshot {
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Arc<QueueEntry>] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter().map(|e| e.as_ref())
    }
}
