use std::path::PathBuf;

/// Errors produced by the segmentation and adaptation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported version {found} in {path}")]
    BadVersion { path: PathBuf, found: u32 },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("size overflow in {path}: {detail}")]
    Overflow { path: PathBuf, detail: String },

    #[error("malformed file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("unknown class name {name:?} at line {line} of {path}")]
    UnknownClass {
        path: PathBuf,
        line: usize,
        name: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input files or directories rather than by
    /// configuration or arithmetic.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::BadVersion { .. }
                | Error::Truncated { .. }
                | Error::Overflow { .. }
                | Error::Malformed { .. }
                | Error::UnknownClass { .. }
                | Error::Dataset(_)
                | Error::Io { .. }
                | Error::Shape(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
