use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} at sample {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("invalid targets: {0}")]
    InvalidTargets(String),

    #[error("invalid probability row {row}: {reason}")]
    InvalidProbabilities { row: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("at least {needed} particles required, got {found}")]
    TooFewParticles { needed: usize, found: usize },

    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),

    #[error("patch side {patch} exceeds image extent {height}x{width}")]
    PatchTooLarge {
        patch: usize,
        height: usize,
        width: usize,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("pool exhausted: {requested} samples requested, {available} available")]
    PoolExhausted { requested: usize, available: usize },

    #[error("checkpoint has wrong magic bytes")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("checkpoint is truncated")]
    TruncatedCheckpoint,

    #[error("checkpoint spec digest mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    SpecDigestMismatch { stored: u64, computed: u64 },

    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("malformed dataset header: {0}")]
    MalformedHeader(String),

    #[error("line {line}: expected {expected} fields, found {found}")]
    RowLengthMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-finite or unparsable value {value:?}")]
    NonFiniteValue { line: usize, value: String },

    #[error("line {line}: invalid class label {value:?}")]
    InvalidLabel { line: usize, value: String },

    #[error("dataset file is truncated or malformed: {0}")]
    MalformedDataset(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
