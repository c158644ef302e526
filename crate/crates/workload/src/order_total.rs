//! Shop-style order totals: add a line item, recompute the order's item
//! count and total with SUM queries, and store them on the order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use txmerge_core::rewrite::{dispatch_results, merge_inserts, Rewriter};
use txmerge_core::{Assignment, Decimal, Expr, Operand, Projection, ResultSet, Schema, Statement, Value};
use txmerge_engine::{Engine, EngineConfig, EngineError, Txn};
use txmerge_service::{Args, ProgramError, TransactionProgram};

use crate::exec::Exec;
use crate::tpcc::key;

pub const SCHEMA_JSON: &str = include_str!("../../../templates/order_total_schema.json");

pub fn schema() -> Schema {
    Schema::from_json_str(SCHEMA_JSON).expect("bundled schema parses")
}

/// `orders` with ids `1..=orders`, all totals zero, and no line items.
pub fn load(orders: i64, config: EngineConfig) -> Result<Engine, EngineError> {
    let e = Engine::with_config(schema(), config);
    e.load(
        "orders",
        (1..=orders).map(|id| {
            vec![Value::Int(id), Value::Decimal(Decimal::ZERO), Value::Int(0), Value::Decimal(Decimal::ZERO), Value::Timestamp(0)]
        }),
    )?;
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddItemArgs {
    pub order_id: i64,
    /// Line number, unique within the order.
    pub line_no: i64,
    pub variant_id: i64,
    pub quantity: i64,
    pub price: Decimal,
    pub now: i64,
}

impl AddItemArgs {
    pub fn to_args(&self) -> Args {
        match serde_json::to_value(self).expect("serializable") {
            Json::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        }
    }

    pub fn from_args(args: &Args) -> Result<Self, ProgramError> {
        serde_json::from_value(Json::Object(args.clone())).map_err(|e| ProgramError::Invalid(e.to_string()))
    }

    fn line_total(&self) -> Option<Decimal> {
        self.price.checked_mul_int(self.quantity)
    }
}

fn line_insert(a: &AddItemArgs) -> Statement {
    Statement::insert(
        "line_items",
        &["order_id", "line_no", "variant_id", "quantity", "price"],
        vec![vec![
            Operand::value(a.order_id),
            Operand::value(a.line_no),
            Operand::value(a.variant_id),
            Operand::value(a.quantity),
            Operand::Value(Value::Decimal(a.price)),
        ]],
    )
}

pub fn count_select(order: i64) -> Statement {
    Statement::select("line_items", vec![Projection::sum(Expr::col("quantity")).alias("item_count")])
        .filter(key(&[("order_id", Value::Int(order))]))
}

pub fn total_select(order: i64) -> Statement {
    Statement::select("line_items", vec![Projection::sum(Expr::mul(Expr::col("price"), Expr::col("quantity"))).alias("item_total")])
        .filter(key(&[("order_id", Value::Int(order))]))
}

pub fn order_update(order: i64, item_total: Decimal, item_count: i64, now: i64) -> Statement {
    Statement::update(
        "orders",
        vec![
            Assignment::new("item_total", Expr::value(item_total)),
            Assignment::new("item_count", Expr::value(item_count)),
            Assignment::new("total", Expr::value(item_total)),
            Assignment::new("updated_at", Expr::Value(Value::Timestamp(now))),
        ],
    )
    .filter(key(&[("id", Value::Int(order))]))
}

pub fn touch(order: i64, now: i64) -> Statement {
    Statement::update("orders", vec![Assignment::new("updated_at", Expr::Value(Value::Timestamp(now)))])
        .filter(key(&[("id", Value::Int(order))]))
}

fn merge_err(e: impl std::fmt::Display) -> ProgramError {
    ProgramError::Merge(e.to_string())
}

fn overflow() -> ProgramError {
    ProgramError::Invalid("decimal overflow".into())
}

/// The SUM value of a one-row aggregate result; absent or NULL means zero.
fn sum_of(rs: &ResultSet) -> Option<&Value> {
    rs.rows.first().and_then(|r| r.last()).filter(|v| !v.is_null())
}

fn output(count: i64, total: Decimal) -> Json {
    json!({ "item_count": count, "item_total": total.to_string() })
}

pub fn run_original(db: &mut dyn Exec, a: &AddItemArgs) -> Result<Json, ProgramError> {
    db.exec(&line_insert(a))?;
    let count = db.exec(&count_select(a.order_id))?;
    let count = sum_of(&count).and_then(Value::as_int).unwrap_or(0);
    let total = db.exec(&total_select(a.order_id))?;
    let total = sum_of(&total).and_then(Value::as_decimal).unwrap_or(Decimal::ZERO);
    db.exec(&order_update(a.order_id, total, count, a.now))?;
    db.exec(&touch(a.order_id, a.now))?;
    Ok(output(count, total))
}

/// Merged form: one multi-row insert, two GROUP BY sums, and one update per
/// source line covering every touched order. A member's sums exclude lines
/// added by later members of the same order.
pub fn run_merged(db: &mut dyn Exec, rw: &Rewriter, batch: &[AddItemArgs]) -> Result<Vec<Json>, ProgramError> {
    db.exec(&merge_inserts(&batch.iter().map(line_insert).collect::<Vec<_>>()).map_err(merge_err)?)?;
    let read = |db: &mut dyn Exec, stmts: Vec<Statement>| -> Result<Vec<ResultSet>, ProgramError> {
        let (merged, map) = rw.merge_selects(&stmts).map_err(merge_err)?;
        let rs = db.exec(&merged)?;
        dispatch_results(&rs, &map, stmts.len()).map_err(merge_err)
    };
    let counts = read(db, batch.iter().map(|a| count_select(a.order_id)).collect())?;
    let totals = read(db, batch.iter().map(|a| total_select(a.order_id)).collect())?;

    // Walk backwards, peeling later members' lines off the final sums.
    let mut later: HashMap<i64, (i64, Decimal)> = HashMap::new();
    let mut seen = vec![(0i64, Decimal::ZERO); batch.len()];
    for k in (0..batch.len()).rev() {
        let a = &batch[k];
        let (lq, lt) = later.get(&a.order_id).copied().unwrap_or((0, Decimal::ZERO));
        let count = sum_of(&counts[k]).and_then(Value::as_int).unwrap_or(0) - lq;
        let total = sum_of(&totals[k])
            .and_then(Value::as_decimal)
            .unwrap_or(Decimal::ZERO)
            .checked_sub(lt)
            .ok_or_else(overflow)?;
        seen[k] = (count, total);
        let line = a.line_total().ok_or_else(overflow)?;
        later.insert(a.order_id, (lq + a.quantity, lt.checked_add(line).ok_or_else(overflow)?));
    }

    // Each order ends with the values its last member wrote.
    let mut last: Vec<(i64, usize)> = Vec::new();
    for (k, a) in batch.iter().enumerate() {
        match last.iter_mut().find(|(o, _)| *o == a.order_id) {
            Some(entry) => entry.1 = k,
            None => last.push((a.order_id, k)),
        }
    }
    let updates: Vec<Statement> =
        last.iter().map(|&(o, k)| order_update(o, seen[k].1, seen[k].0, batch[k].now)).collect();
    db.exec(&rw.merge_updates(&updates).map_err(merge_err)?)?;
    let touches: Vec<Statement> = last.iter().map(|&(o, k)| touch(o, batch[k].now)).collect();
    db.exec(&rw.merge_updates(&touches).map_err(merge_err)?)?;

    Ok(seen.into_iter().map(|(c, t)| output(c, t)).collect())
}

/// Service program keyed by order id.
pub struct OrderTotal {
    rewriter: Rewriter,
}

impl OrderTotal {
    pub fn new() -> Self {
        OrderTotal { rewriter: Rewriter::new() }
    }

    pub fn with_rewriter(rewriter: Rewriter) -> Self {
        OrderTotal { rewriter }
    }
}

impl Default for OrderTotal {
    fn default() -> Self {
        Self::new()
    }
}

impl TransactionProgram for OrderTotal {
    fn name(&self) -> &str {
        "order_total"
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        Ok(vec![Value::Int(AddItemArgs::from_args(args)?.order_id)])
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        run_original(txn, &AddItemArgs::from_args(args)?)
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        let batch: Vec<AddItemArgs> = batch.iter().map(|a| AddItemArgs::from_args(a)).collect::<Result<_, _>>()?;
        run_merged(txn, &self.rewriter, &batch)
    }
}
