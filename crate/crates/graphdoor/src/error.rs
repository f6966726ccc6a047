//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty mask: at least one row must be selected")]
    EmptyMask,
    #[error("no labeled nodes available for training")]
    NoLabeledNodes,
    #[error("empty poisoned node set")]
    EmptyPoisonedSet,
    #[error("uncovered target categories: {0:?}")]
    UncoveredCategories(Vec<usize>),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unexpected EOF in {0}")]
    UnexpectedEof(String),
    #[error("dimension mismatch in {context}: {detail}")]
    DimensionMismatch { context: String, detail: String },
    #[error("non-finite feature at row {row}, col {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("parse error in {file} line {line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for config problems, 3 when a
    /// target category has no triggers, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::UncoveredCategories(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
