use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShpError {
    #[error("chart-domain violation: {0}")]
    ChartDomain(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("incomplete cover: {} grid points unreachable (first: {:?})", .0.len(), .0.first())]
    IncompleteCover(Vec<usize>),

    #[error("linear solve failed: {0}")]
    Conditioning(String),
}

pub type Result<T> = std::result::Result<T, ShpError>;
