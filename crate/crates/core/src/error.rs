use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("size arithmetic overflowed for {0}")]
    Overflow(&'static str),

    #[error("truncated checkpoint: payload is {actual} bytes, need at least {tied} bytes")]
    TruncatedCheckpoint { actual: u64, tied: u64 },

    #[error(
        "checkpoint size mismatch: payload is {actual} bytes, expected {tied} (tied) or {untied} (untied)"
    )]
    SizeMismatch { actual: u64, tied: u64, untied: u64 },

    #[error("failed to allocate {bytes} bytes for buffer `{buffer}`")]
    Allocation { buffer: &'static str, bytes: usize },

    #[error("position {pos} exceeds sequence length {seq_len}")]
    SequenceOverflow { pos: usize, seq_len: usize },

    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("logits contain a non-finite value at index {index}")]
    InvalidLogits { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid sampler config: {0}")]
    InvalidSampler(String),

    #[error("percentile of an empty series")]
    EmptyInput,

    #[error("write failed: {0}")]
    Write(#[source] std::io::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
