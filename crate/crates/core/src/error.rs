//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The design or data violate the positivity/detectability regime the
    /// model assumes (undetectable pixel, dead LOR, ...).
    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// An iterate predicts zero intensity on a LOR that carries data.
    #[error("degenerate support: LOR {lor} has data but zero predicted intensity")]
    DegenerateSupport { lor: usize },

    /// A sampler state that cannot generate the observed counts.
    #[error("degenerate state: LOR {lor} has counts but zero intensity under the current image")]
    DegenerateState { lor: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid segmentation: image {image}, segment {segment} is empty")]
    InvalidSegmentation { image: usize, segment: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("capacity exceeded: {what} has size {size}, limit is {limit}")]
    Capacity {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The direction has a component in the null space of the observed
    /// Fisher information, so the missing-information ratio is undefined.
    #[error("undefined direction: kernel component {kernel_norm:e} exceeds tolerance")]
    UndefinedDirection { kernel_norm: f64 },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status used by the command-line driver.
    ///
    /// `2` for configuration problems, `3` for bad or inconsistent data,
    /// `4` for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Numeric(_)
            | Error::DegenerateSupport { .. }
            | Error::DegenerateState { .. }
            | Error::UndefinedDirection { .. } => 4,
            _ => 3,
        }
    }
}
