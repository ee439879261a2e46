use thiserror::Error;

pub type Result<T, E = SviError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SviError {
    #[error("dimension mismatch in block {block}: expected {expected}, got {actual}")]
    DimensionMismatch {
        block: usize,
        expected: usize,
        actual: usize,
    },

    #[error("block structure mismatch: expected {expected} blocks, got {actual}")]
    BlockCountMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error(
        "projection did not converge{} after {iterations} sweeps (residual {residual:.3e})",
        block.map(|b| format!(" in block {b}")).unwrap_or_default()
    )]
    ProjectionFailed {
        block: Option<usize>,
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("point outside the map domain: {0}")]
    Domain(String),

    #[error("{0} is not available for this map")]
    Unsupported(&'static str),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("run with seed {seed} failed at iteration {iteration}: {source}")]
    RunFailed {
        seed: u64,
        iteration: usize,
        #[source]
        source: Box<SviError>,
    },

    #[error("reference solver stopped after {iterations} iterations with residual {residual:.3e}")]
    OracleFailed { iterations: usize, residual: f64 },

    #[error("experiment cell {cell} failed: {source}")]
    CellFailed {
        cell: String,
        #[source]
        source: Box<SviError>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SviError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SviError::InvalidParameter(msg.into())
    }

    /// Attaches a block index to a projection failure.
    pub(crate) fn in_block(self, idx: usize) -> Self {
        match self {
            SviError::ProjectionFailed {
                iterations,
                residual,
                last_iterate,
                ..
            } => SviError::ProjectionFailed {
                block: Some(idx),
                iterations,
                residual,
                last_iterate,
            },
            SviError::DimensionMismatch { expected, actual, .. } => SviError::DimensionMismatch {
                block: idx,
                expected,
                actual,
            },
            other => other,
        }
    }
}
