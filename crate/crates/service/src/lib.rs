//! The merger service. Invocations are routed to a worker by the merger-level
//! partition policy and queued there; each worker groups its queue by
//! (transaction, worker-level bucket) and runs a batch as one backend
//! transaction once it is full or its oldest member has waited out the
//! timeout. A retryable abort of a merged batch is reported to every member.

pub mod config;
pub mod program;
mod service;
mod stats;
pub mod wire;

pub use config::{BatchConfig, ValidationError};
pub use program::{Args, ProgramError, TemplateProgram, TransactionProgram};
pub use service::{PolicyLevel, Service, Status, SubmitError, DEFAULT_QUEUE_CAPACITY, WORKER_BUCKETS};
pub use stats::{percentile, ServiceStats};
