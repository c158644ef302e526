use thiserror::Error;
use txmerge_core::{EvalError, ModelError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    /// The transaction was aborted by the engine and may be retried.
    #[error("retryable abort: {0}")]
    Retryable(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("invalid transaction state: {0}")]
    InvalidState(String),
    #[error("{0} transaction(s) still active")]
    ActiveTxn(usize),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("statement error: {0}")]
    Statement(String),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
}

impl EngineError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EngineError::Retryable(_))
    }
}

impl From<EvalError> for EngineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownColumn(c) => EngineError::Schema(format!("unknown column {c}")),
            other => EngineError::TypeMismatch(other.to_string()),
        }
    }
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Schema(m) => EngineError::Schema(m),
            ModelError::Unsupported(m) => EngineError::Unsupported(m),
            other => EngineError::Statement(other.to_string()),
        }
    }
}
