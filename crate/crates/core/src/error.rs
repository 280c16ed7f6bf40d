use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: rating out of range: {value}")]
    RatingOutOfRange {
        path: PathBuf,
        line: usize,
        value: i64,
    },
    #[error("{path}:{line}: duplicate interaction (user {user}, timestamp {timestamp}, item {item})")]
    DuplicateInteraction {
        path: PathBuf,
        line: usize,
        user: String,
        item: String,
        timestamp: i64,
    },
    #[error("invalid rating {0}; expected 1..=5")]
    InvalidRating(i64),
    #[error("unknown item: {0}")]
    UnknownItem(String),
    #[error("unknown user: {0}")]
    UnknownUser(String),
    #[error("user {0} is not part of the split")]
    UserNotInSplit(String),
    #[error("insufficient negatives for user {user}: {available} eligible, 19 required")]
    InsufficientNegatives { user: String, available: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("expected 5 anchors, found {0}")]
    AnchorCount(usize),
    #[error("anchor must be nonzero (rating {0})")]
    ZeroAnchor(u8),
    #[error("invalid anchor file: {0}")]
    AnchorFormat(String),
    #[error("permutation is not a bijection on 1..=5: {0:?}")]
    NotAPermutation(Vec<u8>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("target index {index} out of range for {len} candidates")]
    TargetOutOfRange { index: usize, len: usize },
    #[error("non-finite value during training at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Binary(#[from] bincode::Error),
}
