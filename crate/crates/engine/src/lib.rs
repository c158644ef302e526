//! Reference in-memory relational engine. Row-level strict two-phase locking
//! over primary keys gives serializable, strict schedules; lock waits that
//! exceed the configured timeout abort the waiter with a retryable error.
//!
//! Phantom protection covers primary-key access only: point lookups lock the
//! key even when the row is absent, but range and full scans lock just the
//! rows they find.

mod access;
mod engine;
mod error;
mod lock;
pub mod serial;

pub use access::{key_exact, plan_access, Access};
pub use engine::{emit_external_sql, Engine, EngineConfig, EngineStats, KindCounts, Snapshot, Txn, TxnState};
pub use error::EngineError;
pub use lock::{LockMode, TxnId};
