use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval [{start}, {end}]")]
    InvalidInterval { start: f64, end: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed feature file {path}: {reason}")]
    FeatureFormat { path: PathBuf, reason: String },

    #[error("sample `{sample}`: {reason}")]
    Sample { sample: String, reason: String },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("non-finite loss on sample `{sample}` ({detail})")]
    NonFiniteLoss { sample: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub(crate) fn sample(sample: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Sample { sample: sample.into(), reason: reason.into() }
    }
}
