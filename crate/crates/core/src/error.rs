use thiserror::Error;

/// Errors raised by the library. Each variant carries a stable short code
/// (see [`Error::code`]) used by the CLI and the serialized audit trail.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad-mode: unfolding mode must be 1, 2 or 3 (got {0})")]
    BadMode(usize),
    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("diverged: factor entry exceeded 1e12 at step {step}")]
    Diverged { step: u64 },
    #[error("nu-too-small: nu * n = {0} < 1")]
    NuTooSmall(f64),
    #[error("kkt-violation: index {index} has alpha {alpha} and g {g}")]
    KktViolation { index: usize, alpha: f64, g: f64 },
    #[error("empty-margin-set")]
    EmptyMarginSet,
    #[error("immobile: no positive increment for the candidate coefficient")]
    Immobile,
    #[error("too-few-locations: need at least 2 location rows, got {0}")]
    TooFewLocations(usize),
    #[error("empty-stream")]
    EmptyStream,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io-error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::BadMode(_) => "bad-mode",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Diverged { .. } => "diverged",
            Error::NuTooSmall(_) => "nu-too-small",
            Error::KktViolation { .. } => "kkt-violation",
            Error::EmptyMarginSet => "empty-margin-set",
            Error::Immobile => "immobile",
            Error::TooFewLocations(_) => "too-few-locations",
            Error::EmptyStream => "empty-stream",
            Error::Parse(_) => "parse-error",
            Error::Io(_) => "io-error",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::KktViolation { .. } | Error::Immobile | Error::EmptyMarginSet
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
