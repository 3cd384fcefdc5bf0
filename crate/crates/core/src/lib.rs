//! Adversarial fine-tuning of recurrent language models for creative text.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a define-by-run reverse-mode engine over `f64` tensors,
//!   plus Adam and finite-difference gradient checking.
//! - [`corpus`]: tokenization, vocabularies, document splits, BPTT batches.
//! - [`generator`]: an LSTM language model with tied input/output embeddings
//!   and AWD-LSTM style dropout.
//! - [`discriminator`]: a copy of the generator's encoder topped with a
//!   concat-pooling head that scores sequences in `(0, 1)`.
//! - [`training`]: maximum-likelihood training, policy-gradient
//!   ("creative") adversarial training and Gumbel-softmax adversarial
//!   training.
//! - [`eval`]: perplexity, distinct-n and comparison reports.
//! - [`config`] and [`checkpoint`]: run configuration files, presets, and the
//!   portable binary checkpoint format used by the command-line tool.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod discriminator;
mod encoder;
pub mod eval;
pub mod generator;
pub mod training;

#[cfg(doctest)]
mod book;

pub use encoder::{DropoutMasks, Dropouts, EncoderKind, HiddenState, LstmEncoder, LstmLayer, Mode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
