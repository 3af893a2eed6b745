use thiserror::Error;

/// Errors produced by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is malformed (non-finite values, bad shapes, bad labels).
    #[error("invalid data: {0}")]
    Data(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file does not match its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// A column passed to orthonormalization is linearly dependent on the
    /// columns before it.
    #[error("column {index} is linearly dependent on earlier columns")]
    RankDeficient { index: usize },

    /// An operation refused to allocate more memory than its limit allows.
    #[error("refusing allocation of {required} bytes (limit {limit} bytes)")]
    MemoryLimit { required: u64, limit: u64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged { epoch: usize, batch: usize },

    /// An iterative eigensolver failed to converge.
    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
