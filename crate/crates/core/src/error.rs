use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("conv1d: input of length {len} is shorter than kernel {kernel}")]
    InputTooShort { len: usize, kernel: usize },
    #[error("acoustic input has {len} frames; the down-sampling stack needs at least {min}")]
    AudioTooShort { len: usize, min: usize },
    #[error("index {id} at position {position} out of range for table of {size} rows")]
    Index { position: usize, id: usize, size: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; call zero_grads first")]
    BackwardTwice,
    #[error("attention row {row} has every key masked")]
    DegenerateAttention { row: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` has shape {expected:?} but checkpoint holds {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {step} (lr {lr:e})")]
    NonFiniteLoss { step: u64, lr: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4], found: [u8; 4] },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: payload holds {found} bytes, header implies {expected}")]
    PayloadLength { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: truncated or malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Corpus { path: PathBuf, line: usize, reason: String },
    #[error("audio flag and features disagree: has_audio={has_audio}, features present={features}")]
    AudioConsistency { has_audio: bool, features: bool },
    #[error("text has no alphanumeric word")]
    NoWords,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("sequence {index}: {reason}")]
    SequenceMismatch { index: usize, reason: String },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
