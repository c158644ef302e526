//! Workloads for exercising the merger: single-statement micro batches,
//! TPC-C new-order and payment, and an order-total aggregate workload. Each
//! transaction exists in an original and a merged form; the oracle checks
//! that they agree.

pub mod bench;
pub mod exec;
pub mod gen;
pub mod golden;
pub mod micro;
pub mod neworder;
pub mod oracle;
pub mod order_total;
pub mod payment;
pub mod tpcc;
