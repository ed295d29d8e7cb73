use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("mention in document `{doc_id}` has span [{start}, {end}) outside text of {len} characters")]
    SpanOutOfRange {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("mention in document `{doc_id}` at [{start}, {end}): surface {surface:?} does not match text {actual:?}")]
    SurfaceMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        surface: String,
        actual: String,
    },

    #[error("dimension mismatch for `{entry_id}`: expected {expected}, found {found}")]
    Dimension {
        entry_id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite vector component in entry `{entry_id}`")]
    NonFinite { entry_id: String },

    #[error("tag sequences are misaligned: {0}")]
    Alignment(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}
