use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward: {0}")]
    Backward(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown concept id {0}")]
    UnknownConcept(usize),

    #[error("concept {0} has no precomputed embedding")]
    MissingEmbedding(usize),

    #[error("variant {variant} needs a subgraph for sample {sample} candidate {candidate}")]
    MissingSubgraph {
        variant: String,
        sample: usize,
        candidate: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid sample: {0}")]
    Sample(String),

    #[error("metric input: {0}")]
    Metric(String),

    #[error("knowledge graph was accessed {0} time(s) during knowledge-free inference")]
    KnowledgeAccess(u64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
