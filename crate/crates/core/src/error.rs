use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent dimensions or invalid hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or mismatched user input (unknown ids, bad boxes).
    #[error("input error: {0}")]
    Input(String),

    /// A non-finite value appeared during evaluation or training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Non-finite activation in the energy network; `layer` indexes declaration order.
    #[error("numeric failure: non-finite output of layer {layer} ({name})")]
    NonFiniteLayer { layer: usize, name: &'static str },

    /// Metric is undefined for the given input (e.g. no ground truth).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Text parse failure with 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Binary file format violation.
    #[error("format error: {0}")]
    Format(String),

    /// Scene synthesis could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Numeric(_) | Error::NonFiniteLayer { .. } => "numeric",
            Error::UndefinedMetric(_) => "metric",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Generation(_) => "generation",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
