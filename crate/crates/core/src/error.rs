use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate vector: norm {norm:e} is below {min:e}")]
    DegenerateVector { norm: f64, min: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient check invalid: {0}")]
    CheckInvalid(String),

    #[error("backward called before forward")]
    NoForward,

    #[error("wav parse error: {0}")]
    WavParse(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },

    #[error("input too short: {0}")]
    Length(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("not enough negatives: {0}")]
    InsufficientNegatives(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("artist-stratification violated by: {}", .0.join(", "))]
    Stratification(Vec<String>),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("store format error: {0}")]
    StoreFormat(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("non-finite gradient for parameter `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("loss became {loss} at step {step}")]
    NanLoss { step: u64, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
