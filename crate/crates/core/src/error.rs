use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum TmdaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("fit diverged at outer iteration {iteration} ({} logged iterations)", trace.len())]
    FitDiverged {
        iteration: usize,
        trace: Vec<crate::solver::TraceEntry>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TmdaError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(TmdaError::InvalidInput(msg.into()))
}
