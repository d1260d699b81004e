use thiserror::Error;

/// Errors produced by the sampling engine and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("backend not ready: {0}")]
    State(String),

    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("MIDI parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("rejection sampler acceptance rate {rate:.2e} too low; use importance-sampling estimates instead")]
    Efficiency { rate: f64 },

    #[error("loss evaluation failed at step t={t}: {source}")]
    Loss {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
