use thiserror::Error;

/// Errors raised by ingestion, fitting, prediction and evaluation.
#[derive(Debug, Error)]
pub enum SaeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    #[error("no records in {0}")]
    NoRecords(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown county '{0}'")]
    UnknownCounty(String),
}

impl SaeError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SaeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix the message with `ctx`, keeping the variant.
    pub fn context(self, ctx: &str) -> Self {
        use SaeError::*;
        match self {
            Io { path, source } => Io { path: format!("{ctx}: {path}"), source },
            Parse { path, row, message } => Parse { path, row, message: format!("{ctx}: {message}") },
            NoRecords(m) => NoRecords(format!("{ctx}: {m}")),
            InvalidInput(m) => InvalidInput(format!("{ctx}: {m}")),
            Domain(m) => Domain(format!("{ctx}: {m}")),
            Dimension(m) => Dimension(format!("{ctx}: {m}")),
            Config(m) => Config(format!("{ctx}: {m}")),
            Numerical(m) => Numerical(format!("{ctx}: {m}")),
            UnknownCounty(m) => UnknownCounty(format!("{ctx}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, SaeError>;
