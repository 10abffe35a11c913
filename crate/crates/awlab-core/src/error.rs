use thiserror::Error;

/// Errors surfaced by the numerical layer.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid grid or physical configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two objects live on incompatible grids or time axes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An inner iterative solve failed to reach its tolerance.
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    /// A richer numerical procedure failed (named check, stationarity, …).
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        CoreError::Dimension(msg.into())
    }

    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
