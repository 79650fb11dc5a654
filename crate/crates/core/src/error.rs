use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("optimizer error on parameter `{param}`: {reason}")]
    Optimizer { param: String, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sampling error in dimension {dim}: {reason}")]
    Sampling { dim: usize, reason: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("missing artifact {path}; produce it with `weightgen {producer}`")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { path: path.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by diverging numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Optimizer { .. } | Error::Sampling { .. } | Error::Fit(_))
    }
}
