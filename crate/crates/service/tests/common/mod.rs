use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value as Json};
use txmerge_core::{Assignment, Predicate, Statement, Value};
use txmerge_engine::serial::{kv_engine, TABLE};
use txmerge_engine::{Engine, EngineConfig, Txn};
use txmerge_service::program::{arg, arg_int};
use txmerge_service::{Args, ProgramError, TransactionProgram};

/// `v += d` on row `id`, returning the new value. The merged form applies
/// the updates in batch order within one transaction.
pub struct Bump;

impl Bump {
    fn one(txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        let id = arg(args, "id")?;
        let d = arg_int(args, "d")?;
        txn.execute(&Statement::update(TABLE, vec![Assignment::add_value("v", d)]).filter(Predicate::eq("id", id.clone())))?;
        let rs = txn.execute(&Statement::select_columns(TABLE, &["v"]).filter(Predicate::eq("id", id)))?;
        Ok(rs.first("v").map_or(Json::Null, Value::to_plain_json))
    }
}

impl TransactionProgram for Bump {
    fn name(&self) -> &str {
        "bump"
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        Ok(vec![arg(args, "id")?])
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        Self::one(txn, args)
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        batch.iter().map(|a| Self::one(txn, a)).collect()
    }
}

pub fn bump(id: i64, d: i64) -> Args {
    json!({ "id": id, "d": d }).as_object().unwrap().clone()
}

pub fn engine(rows: i64) -> Engine {
    kv_engine(rows, EngineConfig { lock_timeout: Duration::from_millis(50), ..Default::default() })
}

pub fn programs() -> Vec<Arc<dyn TransactionProgram>> {
    vec![Arc::new(Bump)]
}
