use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("gradient requested of non-scalar output with shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("node {0} is not part of this graph")]
    DetachedNode(usize),

    #[error("objective depends on gradient node {0} produced by an unrecorded backward sweep")]
    UnrecordedSweep(usize),

    #[error("non-finite value in {context} (index {index})")]
    NonFinite { context: String, index: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("reconstruction failed: extraction ({extraction}); inversion ({inversion})")]
    ReconstructionFailed { extraction: String, inversion: String },

    #[error("no usable benign reconstructions: {found} recovered rows carry the benign label, at least 2 are needed")]
    EmptyBenign { found: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
