use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the enhancement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("expected a {expected} Hz signal, got {actual} Hz")]
    WrongRate { expected: u32, actual: u32 },
    #[error("invalid window/hop: window={window}, hop={hop}")]
    InvalidWindow { window: usize, hop: usize },
    #[error("reassembly requires hop == window (hop={hop}, window={window})")]
    OverlapUnsupported { window: usize, hop: usize },
    #[error("signal has zero power: {0}")]
    ZeroPower(&'static str),
    #[error("manifest error at line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("virtual batch norm used before a reference batch was set")]
    MissingRefBatch,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("every frame of the reference signal is silent")]
    AllFramesSilent,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("incomplete rating triplet for listener {listener}, sentence {sentence}")]
    IncompleteTriplet { listener: String, sentence: String },
    #[error("ratings file error at line {line}: {reason}")]
    Ratings { line: usize, reason: String },
    #[error("signal too short: need at least {needed} samples, got {actual}")]
    TooShort { needed: usize, actual: usize },
    #[error("inconsistent spectrogram: {0}")]
    InconsistentShape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
