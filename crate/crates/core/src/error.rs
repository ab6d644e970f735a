use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An operation that needs at least one element received none.
    Empty(&'static str),
    DuplicateId { kind: &'static str, id: String },
    InvalidConfig(String),
    DimensionMismatch { expected: usize, found: usize },
    /// A NaN or infinity appeared while computing the named stage.
    NonFinite { stage: &'static str },
    MissingTeacherScore { query_id: String, passage_id: String },
    UnknownId { kind: &'static str, id: String },
    LengthMismatch { left: usize, right: usize },
    Selector { query_id: String, message: String },
    Scorer { query_id: String, message: String },
    InvalidLexicon(String),
    InvalidWeight { term: String, weight: f64 },
    /// Training produced a non-finite loss or gradient.
    Diverged { epoch: usize, batch: usize, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Empty(what) => write!(f, "{what} must not be empty"),
            Error::DuplicateId { kind, id } => write!(f, "duplicate {kind} id `{id}`"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite { stage } => write!(f, "non-finite value during {stage}"),
            Error::MissingTeacherScore {
                query_id,
                passage_id,
            } => write!(f, "no teacher score for ({query_id}, {passage_id})"),
            Error::UnknownId { kind, id } => write!(f, "unknown {kind} id `{id}`"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::Selector { query_id, message } => {
                write!(f, "passage selector failed on query {query_id}: {message}")
            }
            Error::Scorer { query_id, message } => {
                write!(f, "scorer failed on query {query_id}: {message}")
            }
            Error::InvalidLexicon(msg) => write!(f, "invalid lexicon: {msg}"),
            Error::InvalidWeight { term, weight } => {
                write!(f, "weight for `{term}` must be finite and positive, got {weight}")
            }
            Error::Diverged {
                epoch,
                batch,
                detail,
            } => write!(f, "training diverged at epoch {epoch}, batch {batch}: {detail}"),
        }
    }
}

impl core::error::Error for Error {}
