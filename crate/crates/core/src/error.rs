use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's shape or value contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A geometric transform left no face pixels inside the frame.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// A ratio's denominator fell under its guard threshold.
    #[error("division guard: {0}")]
    DivisionGuard(String),

    /// A posterior row had no finite log-likelihood.
    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested configuration is outside what is supported (e.g. table range).
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Training produced a NaN or infinite loss term.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {term} = {value}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        term: &'static str,
        value: f64,
    },

    /// A file was written by an incompatible format version.
    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    /// Stored content digest does not match the payload.
    #[error("digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
