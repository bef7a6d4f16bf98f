use std::path::PathBuf;

use thiserror::Error;

use crate::graph::GraphError;
use crate::masking::MaskError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("joint count mismatch: expected {expected}, found {found}")]
    JointMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss during {0}")]
    NonFiniteLoss(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} at line {line}, column {column}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("size mismatch for `{name}`: expected {expected} values, found {found}")]
    SizeMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, e: &serde_json::Error) -> Self {
        Error::Parse {
            what,
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        }
    }

    /// Forward-pass non-finite errors become a training abort.
    pub(crate) fn during(self, phase: &str) -> Self {
        match self {
            Error::Tensor(TensorError::NonFinite { op }) => Error::NonFiniteLoss(format!("{phase} ({op})")),
            other => other,
        }
    }
}
