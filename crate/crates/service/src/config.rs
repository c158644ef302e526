use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub workers: usize,
    pub batch_size: usize,
    pub timeout_ms: u64,
    /// Per-template merge switch; templates not listed merge.
    #[serde(default)]
    pub merge: BTreeMap<String, bool>,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { workers: 1, batch_size: 8, timeout_ms: 5, merge: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ValidationError(pub String);

impl BatchConfig {
    pub fn new(workers: usize, batch_size: usize, timeout_ms: u64) -> Self {
        BatchConfig { workers, batch_size, timeout_ms, merge: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.workers == 0 {
            return Err(ValidationError("workers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ValidationError("batch_size must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ValidationError("timeout_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn merges(&self, txn: &str) -> bool {
        self.merge.get(txn).copied().unwrap_or(true)
    }

    /// Effective batch limit for a template.
    pub fn limit(&self, txn: &str) -> usize {
        if self.merges(txn) {
            self.batch_size
        } else {
            1
        }
    }
}
