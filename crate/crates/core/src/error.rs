//! Error type shared across the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid dimension in {context}: {rows}x{cols}")]
    InvalidDimension {
        context: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },

    #[error("non-finite gradient for parameter `{name}`")]
    NanGradient { name: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}; last good checkpoint retained")]
    NanLoss { epoch: usize, batch: usize },

    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("zero-norm feature row {row}")]
    ZeroNormRow { row: usize },

    #[error("zero-norm embedding for item {item} in the contrastive critic")]
    ZeroNormEmbedding { item: usize },

    #[error("negative value {value} at row {row} where nonnegative input is required")]
    NegativeValue { row: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code contract: 2 usage/config, 3 artifact
    /// incompatibility, 4 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::IncompatibleCheckpoint(_) => 3,
            Error::NanGradient { .. }
            | Error::NanLoss { .. }
            | Error::NonDeterministicLoss { .. }
            | Error::NonFinite { .. }
            | Error::ZeroNormRow { .. }
            | Error::ZeroNormEmbedding { .. }
            | Error::NegativeValue { .. } => 4,
            _ => 2,
        }
    }
}
