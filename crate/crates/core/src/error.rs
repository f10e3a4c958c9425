use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("record `{record}` references unknown id `{target}`")]
    UnknownReference { record: String, target: String },

    #[error("bad magic: expected EMB1, found {found:02x?}")]
    BadMagic { found: Vec<u8> },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("K={k} out of range: at most {max} neighbours available")]
    KOutOfRange { k: usize, max: usize },

    #[error("coordinates mix wgs84 and planar reference systems")]
    MixedCrs,

    #[error("coordinate out of range: {0}")]
    CoordinateRange(String),

    #[error("class `{class}` has {members} members but an epoch holds only {batches} batches")]
    UnsatisfiableClass {
        class: String,
        members: usize,
        batches: usize,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("config line {line}, key `{key}`: {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for IO failures,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
