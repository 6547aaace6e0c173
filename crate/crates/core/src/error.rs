//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("non-finite gradient for parameter `{0}`; step rejected")]
    NonFiniteGradient(String),

    #[error("non-finite values in {0}")]
    NonFiniteValue(&'static str),

    #[error("non-finite loss at step {step}; last good checkpoint retained at {checkpoint}")]
    NonFiniteLoss { step: u64, checkpoint: String },

    #[error("optimizer step counter {t} reached the schedule horizon {total}")]
    ScheduleExhausted { t: u64, total: u64 },

    #[error("bad magic in `{path}`: expected {expected:?}")]
    BadMagic { path: String, expected: &'static str },

    #[error("truncated payload in `{path}` while reading {what}")]
    Truncated { path: String, what: &'static str },

    #[error("dimension overflow: {0:?} exceeds the addressable payload size")]
    DimensionOverflow(Vec<u64>),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint config mismatch (checkpoint hash {ckpt:#018x}, current hash {current:#018x}); pass --allow-mismatch to override")]
    ConfigMismatch { ckpt: u64, current: u64 },

    #[error("band-count mismatch: checkpoint has {ckpt} bands, data has {data}")]
    BandMismatch { ckpt: usize, data: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("all pixels degenerate: spectral norms below threshold everywhere")]
    AllPixelsDegenerate,

    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
