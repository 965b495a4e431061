use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line count mismatch: {complex} complex lines vs {simple} simple lines")]
    Alignment { complex: usize, simple: usize },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training set contains a single class")]
    SingleClass,

    #[error("training diverged (non-finite loss at epoch {epoch})")]
    Diverged { epoch: usize },

    #[error("vocabulary fingerprint mismatch: model {model}, vocabulary {vocab}")]
    FingerprintMismatch { model: String, vocab: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("coefficient undefined: {0}")]
    Undefined(&'static str),

    #[error("sentence {id}: {source}")]
    Sentence {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_sentence(self, id: usize) -> Self {
        match self {
            e @ Error::Sentence { .. } => e,
            e => Error::Sentence {
                id,
                source: Box::new(e),
            },
        }
    }

    /// Errors caused by bad user input rather than by a failing run.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Format { .. }
            | Error::Alignment { .. }
            | Error::MissingColumn(_)
            | Error::FingerprintMismatch { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Sentence { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
