use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("malformed preference pair: {0}")]
    MalformedPair(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("no trajectory has at least {segment_len} transitions")]
    NoEligibleTrajectory { segment_len: usize },

    #[error("non-finite loss at epoch {epoch} (parameter norm {param_norm})")]
    NonFiniteLoss { epoch: usize, param_norm: f64 },

    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    #[error("singular linear system while {0}")]
    Singular(&'static str),

    #[error("invalid statistics input: {0}")]
    Stats(String),

    #[error("line {line}: {reason}")]
    Csv { line: u64, reason: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
