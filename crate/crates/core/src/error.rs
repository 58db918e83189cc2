use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    File {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {0:?}, expected \"DFGT\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown dtype code {0:#04x}")]
    UnknownDtype(u8),

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {0} is not present in the prediction")]
    ClassAbsent(usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("cosine distance undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("segmenter does not provide {0}")]
    Capability(&'static str),

    #[error("segmenter protocol error: {0}")]
    Protocol(String),

    #[error("segmenter failed during {phase} iteration {iteration}: {source}")]
    Backend {
        phase: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            context: path.into(),
            source,
        }
    }
}
