//! Cross-lingual spoken language understanding lab.
//!
//! A desk-scale, fully deterministic implementation of joint intent
//! detection and slot filling trained with a hybrid of unsupervised and
//! supervised contrastive objectives over FIFO sample queues, plus the
//! synthetic multilingual corpora, code-switching augmentation, and CLI
//! harness needed to run end-to-end experiments on one CPU core.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod labels;
pub mod losses;
pub mod numerics;
pub mod queues;
pub mod seed;
pub mod train;

pub use numerics::{NodeId, Tape, Tensor};
