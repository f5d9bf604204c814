use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D input: {0}")]
    DegenerateInput(String),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("unsupported Euler axis order `{0}`")]
    UnsupportedOrder(String),
    #[error("pose interpretation mismatch: expected {expected}, got {got}")]
    InterpretationMismatch { expected: &'static str, got: &'static str },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate bone {parent}->{child}: joint coincides with its parent")]
    DegenerateBone { parent: usize, child: usize },
    #[error("anchor scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid anchor set: {0}")]
    InvalidAnchors(String),
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    SequenceTooShort { needed: usize, got: usize },
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("region partition mismatch: {0}")]
    PartitionMismatch(String),
    #[error("tape exhausted: {0}")]
    TapeExhausted(String),
    #[error("unknown skeleton template `{0}`")]
    UnknownTemplate(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is not positive semi-definite (min eigenvalue {0:e})")]
    NonPsd(f64),
    #[error("condition beat list is empty")]
    EmptyConditionBeats,
    #[error("need at least two clips, got {0}")]
    TooFewClips(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported channel `{channel}` at line {line}")]
    UnsupportedChannel { line: usize, channel: String },
    #[error("invalid file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Errors caused by numerical breakdown rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss(_) | Error::NonPsd(_) | Error::DegenerateInput(_))
    }
}
