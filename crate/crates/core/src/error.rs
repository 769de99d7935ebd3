use thiserror::Error;

use crate::graph::VertexId;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum KtError {
    #[error("unknown vertex id {0}")]
    UnknownVertex(VertexId),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("cannot index an empty graph")]
    EmptyTree,
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("referential error: {0}")]
    Referential(String),
    #[error("verification failed: {} unsafe vertices (first: {:?})", .0.len(), .0.first())]
    Verification(Vec<VertexId>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KtError>;
