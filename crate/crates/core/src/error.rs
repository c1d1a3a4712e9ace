use thiserror::Error;

/// Errors raised anywhere in the forecasting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: reduction over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("backward seed must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("csv row {row}, column {column}: {msg}")]
    Csv {
        row: usize,
        column: String,
        msg: String,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated: needed {expected} bytes, file has {actual}")]
    CheckpointTruncated { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("filter step {step}: {source}")]
    FilterStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
