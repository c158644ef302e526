use thiserror::Error;

/// Errors raised while building, validating, binding or rendering statements.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("arity error: expected {expected} bindings, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("unbound parameter ?{0}")]
    Unbound(String),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
}

/// Errors raised while evaluating predicates and expressions against a row.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("unbound parameter ?{0}")]
    Unbound(String),
    #[error("arithmetic overflow")]
    Overflow,
}

/// Errors raised by the merge rewriter.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("statements do not share a shape: {0}")]
    ShapeMismatch(String),
    #[error("two instances target the same key {0} with non-commutative assignments")]
    KeyCollision(String),
    #[error("assignment is not a commutative delta: {0}")]
    NotCommutative(String),
    #[error("result row matches no invocation: {0}")]
    OrphanRow(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("cannot merge: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Raised by `verify_interleaving` when a report still carries a cross-group
/// conflict.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("internal error: {0}")]
pub struct InternalError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("stale policy version {offered} (current {current})")]
    StaleVersion { current: u64, offered: u64 },
    #[error("invalid policy: {0}")]
    Invalid(String),
}
