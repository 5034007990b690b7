//! Answer-aware question generation with a draft decoder and a refinement
//! decoder.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`params`], [`tape`], [`lstm`], [`optim`], [`gradcheck`]:
//!   a small reverse-mode differentiation engine with Adam and a
//!   finite-difference checker.
//! - [`data`]: tokenization, vocabulary, SQuAD and synthetic corpora, batches
//!   with per-example extended vocabularies for copying.
//! - [`encoder`]: embeddings, contextual BiLSTM, answer encoder and
//!   passage/answer fusion.
//! - [`attention`], [`decoder`], [`search`]: the two decoders, dual
//!   attention, copy/coverage and greedy/sampled/beam decoding.
//! - [`model`]: the assembled network.
//! - [`training`], [`rewards`], [`checkpoint`]: joint MLE training, REINFORCE
//!   fine-tuning against the draft baseline, persistence. [`bandit`] is a
//!   two-token policy for checking the REINFORCE loss in isolation.
//! - [`metrics`]: BLEU, ROUGE-L, answerability, QBLEU and the analyses.

pub mod attention;
pub mod bandit;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod dump;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rewards;
pub mod search;
pub mod selfcheck;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{ModelConfig, RefNet};
pub use params::{Init, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
