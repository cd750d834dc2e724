use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("node {0} has no neighbors")]
    Isolated(String),

    #[error("missing embedding for node {0}")]
    MissingEmbedding(String),

    #[error("missing ground truth for node {0}")]
    MissingGroundTruth(String),

    #[error("unknown token id {0}")]
    UnknownToken(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged in {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("fingerprint mismatch for {artifact}: artifact has {found:016x}, config expects {expected:016x}; rerun `{rerun}`")]
    FingerprintMismatch {
        artifact: String,
        found: u64,
        expected: u64,
        rerun: &'static str,
    },

    #[error("missing artifact {path}; run `{run_first}` first")]
    MissingArtifact { path: PathBuf, run_first: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
