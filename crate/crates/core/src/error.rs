use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wrong magic bytes or an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    /// Payload shorter or longer than its header declares.
    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss for example {example}")]
    NonFiniteLoss { example: usize },

    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },

    #[error("training diverged at epoch {epoch}; last good checkpoint: {last_good:?}")]
    Diverged {
        epoch: usize,
        last_good: Option<PathBuf>,
    },
}

impl Error {
    /// Short stable tag for the error category, used in single-line CLI
    /// diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::Diverged { .. } => "diverged",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
