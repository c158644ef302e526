use txmerge_core::{ResultSet, Statement};
use txmerge_engine::{EngineError, Txn};

/// Anything that runs statements inside one transaction. Programs are
/// written against this so that the merged statements can be captured.
pub trait Exec {
    fn exec(&mut self, stmt: &Statement) -> Result<ResultSet, EngineError>;
}

impl Exec for Txn {
    fn exec(&mut self, stmt: &Statement) -> Result<ResultSet, EngineError> {
        self.execute(stmt)
    }
}

/// Passes statements through and keeps a copy of each.
pub struct Recording<'a> {
    inner: &'a mut dyn Exec,
    pub log: Vec<Statement>,
}

impl<'a> Recording<'a> {
    pub fn new(inner: &'a mut dyn Exec) -> Self {
        Recording { inner, log: Vec::new() }
    }
}

impl Exec for Recording<'_> {
    fn exec(&mut self, stmt: &Statement) -> Result<ResultSet, EngineError> {
        self.log.push(stmt.clone());
        self.inner.exec(stmt)
    }
}
