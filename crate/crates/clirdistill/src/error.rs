use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {cause}", path.display())]
    Io { path: PathBuf, cause: io::Error },
    /// A malformed record in a text artifact. Lines are 1-based.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// A well-formed file whose content violates an invariant.
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] clirdistill_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("runs cover different queries; only in A: [{}], only in B: [{}]", only_a.join(", "), only_b.join(", "))]
    QueryMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },
    /// Display already includes the cause, so it is not also exposed as a
    /// source (which would print it twice in an error chain).
    #[error("stage `{stage}` failed at {}: {cause}", path.display())]
    Stage {
        stage: &'static str,
        path: PathBuf,
        cause: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |cause| Error::Io { path, cause }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(path: impl Into<PathBuf>, message: impl Into<String>) -> Error {
        Error::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}
