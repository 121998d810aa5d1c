//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the eap-core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Model configuration violates an invariant (dimension mismatch, zero size, ...).
    #[error("invalid config: {0}")]
    Config(String),

    /// Token id outside the model vocabulary.
    #[error("token id {id} out of range (vocab size {vocab_size})")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    /// Sequence longer than the model's positional table, or empty.
    #[error("sequence length {len} outside [1, {max}]")]
    BadSequenceLength { len: usize, max: usize },

    /// Clean and corrupted sequences (or caches) differ in length.
    #[error("length mismatch: clean {clean} vs corrupt {corrupt}")]
    LengthMismatch { clean: usize, corrupt: usize },

    /// An operation that averages over examples received none.
    #[error("empty dataset")]
    EmptyDataset,

    /// Edge name not present in the computational graph.
    #[error("unknown edge: {0}")]
    UnknownEdge(String),

    /// Tensor in a weight bundle has the wrong shape, or is missing/extra.
    #[error("weight bundle mismatch: {0}")]
    WeightMismatch(String),

    /// Malformed weight bundle, score CSV, circuit JSON, or edge name.
    #[error("parse error: {0}")]
    Parse(String),

    /// Caller-supplied argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// External classifier endpoint failed or returned a malformed response.
    #[error("classifier error: {0}")]
    Classifier(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
