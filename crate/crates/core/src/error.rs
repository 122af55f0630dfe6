use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("encoding error in field `{field}` at row {row}: {message}")]
    Encoding {
        field: String,
        row: usize,
        message: String,
    },

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("schema mismatch: missing columns {missing:?}, unexpected columns {extra:?}")]
    SchemaMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("non-finite gradient in boosting round {round}")]
    NonFiniteGradient { round: usize },

    #[error("{solver} did not converge after {iterations} iterations")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        last_iterate: Vec<f64>,
    },

    #[error("invalid record: fields {fields:?}: {message}")]
    Validation {
        fields: Vec<String>,
        message: String,
    },

    #[error("artifact has bad magic header")]
    BadMagic,

    #[error("unsupported artifact version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("artifact checksum mismatch: file is corrupt or was modified")]
    Checksum,

    #[error("artifact is truncated or malformed: {0}")]
    MalformedArtifact(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
