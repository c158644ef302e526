//! TPC-C payment: per-invocation form and the merged form that aggregates
//! warehouse/district year-to-date totals and splits customers by credit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use txmerge_core::rewrite::{dispatch_results, merge_inserts, Rewriter};
use txmerge_core::{Assignment, Decimal, Expr, Operand, ResultSet, Statement, Value};
use txmerge_engine::Txn;
use txmerge_service::{Args, ProgramError, TransactionProgram};

use crate::exec::Exec;
use crate::tpcc::key;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentArgs {
    pub w_id: i64,
    pub d_id: i64,
    pub c_w_id: i64,
    pub c_d_id: i64,
    pub c_id: i64,
    pub amount: Decimal,
    /// History row id, unique per invocation.
    pub h_id: i64,
    pub h_date: i64,
}

impl PaymentArgs {
    pub fn to_args(&self) -> Args {
        match serde_json::to_value(self).expect("serializable") {
            Json::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        }
    }

    pub fn from_args(args: &Args) -> Result<Self, ProgramError> {
        serde_json::from_value(Json::Object(args.clone())).map_err(|e| ProgramError::Invalid(e.to_string()))
    }

    fn customer(&self) -> (i64, i64, i64) {
        (self.c_w_id, self.c_d_id, self.c_id)
    }
}

fn int(v: i64) -> Value {
    Value::Int(v)
}

fn dec(d: Decimal) -> Value {
    Value::Decimal(d)
}

pub fn warehouse_ytd(w: i64, amount: Decimal) -> Statement {
    Statement::update("warehouse", vec![Assignment::add_value("w_ytd", dec(amount))]).filter(key(&[("w_id", int(w))]))
}

pub fn warehouse_select(w: i64) -> Statement {
    Statement::select_columns("warehouse", &["w_name", "w_street_1", "w_city"]).filter(key(&[("w_id", int(w))]))
}

pub fn district_ytd(w: i64, d: i64, amount: Decimal) -> Statement {
    Statement::update("district", vec![Assignment::add_value("d_ytd", dec(amount))])
        .filter(key(&[("d_w_id", int(w)), ("d_id", int(d))]))
}

pub fn district_select(w: i64, d: i64) -> Statement {
    Statement::select_columns("district", &["d_name", "d_street_1", "d_city"]).filter(key(&[("d_w_id", int(w)), ("d_id", int(d))]))
}

fn customer_key(c: (i64, i64, i64)) -> txmerge_core::Predicate {
    key(&[("c_w_id", int(c.0)), ("c_d_id", int(c.1)), ("c_id", int(c.2))])
}

pub fn customer_select(c: (i64, i64, i64)) -> Statement {
    Statement::select_columns("customer", &["c_first", "c_last", "c_credit", "c_discount", "c_balance"]).filter(customer_key(c))
}

pub fn customer_data_select(c: (i64, i64, i64)) -> Statement {
    Statement::select_columns("customer", &["c_data"]).filter(customer_key(c))
}

fn balance_assignments(total: Decimal, count: i64) -> Vec<Assignment> {
    vec![
        Assignment::new("c_balance", Expr::sub(Expr::col("c_balance"), Expr::value(dec(total)))),
        Assignment::add_value("c_ytd_payment", dec(total)),
        Assignment::add_value("c_payment_cnt", count),
    ]
}

/// Good-credit customer update for `count` payments totalling `total`.
pub fn customer_gc_update(c: (i64, i64, i64), total: Decimal, count: i64) -> Statement {
    Statement::update("customer", balance_assignments(total, count)).filter(customer_key(c))
}

/// Bad-credit customer update, which also rewrites `c_data`.
pub fn customer_bc_update(c: (i64, i64, i64), total: Decimal, count: i64, data: &str) -> Statement {
    let mut a = balance_assignments(total, count);
    a.push(Assignment::new("c_data", Expr::value(data)));
    Statement::update("customer", a).filter(customer_key(c))
}

const HISTORY_COLUMNS: [&str; 9] = ["h_id", "h_c_id", "h_c_d_id", "h_c_w_id", "h_d_id", "h_w_id", "h_date", "h_amount", "h_data"];

fn history_row(a: &PaymentArgs, w_name: &Value, d_name: &Value) -> Vec<Operand> {
    let data = format!("{}    {}", w_name.as_str().unwrap_or(""), d_name.as_str().unwrap_or(""));
    vec![
        Operand::value(a.h_id),
        Operand::value(a.c_id),
        Operand::value(a.c_d_id),
        Operand::value(a.c_w_id),
        Operand::value(a.d_id),
        Operand::value(a.w_id),
        Operand::Value(Value::Timestamp(a.h_date)),
        Operand::Value(dec(a.amount)),
        Operand::value(data),
    ]
}

pub const C_DATA_MAX: usize = 500;

/// New bad-credit `c_data`: payment details prepended, truncated.
pub fn bc_data(a: &PaymentArgs, old: &str) -> String {
    let mut s = format!("{} {} {} {} {} {}|{}", a.c_id, a.c_d_id, a.c_w_id, a.d_id, a.w_id, a.amount, old);
    if s.len() > C_DATA_MAX {
        let mut cut = C_DATA_MAX;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

fn single<'r>(rs: &'r ResultSet, what: &str) -> Result<&'r [Value], ProgramError> {
    match rs.rows.as_slice() {
        [row] => Ok(row),
        [] => Err(ProgramError::Invalid(format!("{what} not found"))),
        _ => Err(ProgramError::Invalid(format!("{what} matched {} rows", rs.rows.len()))),
    }
}

fn as_dec(v: &Value) -> Result<Decimal, ProgramError> {
    v.as_decimal().ok_or_else(|| ProgramError::Invalid(format!("expected decimal, got {v:?}")))
}

fn merge_err(e: impl std::fmt::Display) -> ProgramError {
    ProgramError::Merge(e.to_string())
}

fn overflow() -> ProgramError {
    ProgramError::Invalid("decimal overflow".into())
}

fn output(wh: &[Value], dist: &[Value], cust: &[Value], balance: Decimal, data: Option<&str>) -> Json {
    let p = Value::to_plain_json;
    json!({
        "w_name": p(&wh[0]), "w_street_1": p(&wh[1]), "w_city": p(&wh[2]),
        "d_name": p(&dist[0]), "d_street_1": p(&dist[1]), "d_city": p(&dist[2]),
        "c_first": p(&cust[0]), "c_last": p(&cust[1]), "c_credit": p(&cust[2]), "c_discount": p(&cust[3]),
        "c_balance": balance.to_string(),
        "c_data": data.map(|d| d.chars().take(200).collect::<String>()),
    })
}

pub fn run_original(db: &mut dyn Exec, a: &PaymentArgs) -> Result<Json, ProgramError> {
    db.exec(&warehouse_ytd(a.w_id, a.amount))?;
    let wh = db.exec(&warehouse_select(a.w_id))?;
    let wh = single(&wh, "warehouse")?.to_vec();
    db.exec(&district_ytd(a.w_id, a.d_id, a.amount))?;
    let dist = db.exec(&district_select(a.w_id, a.d_id))?;
    let dist = single(&dist, "district")?.to_vec();
    let cust = db.exec(&customer_select(a.customer()))?;
    let cust = single(&cust, "customer")?.to_vec();
    let balance = as_dec(&cust[4])?.checked_sub(a.amount).ok_or_else(overflow)?;
    let data = if cust[2].as_str() == Some("BC") {
        let rs = db.exec(&customer_data_select(a.customer()))?;
        let old = single(&rs, "customer")?[0].as_str().unwrap_or("").to_string();
        let new = bc_data(a, &old);
        db.exec(&customer_bc_update(a.customer(), a.amount, 1, &new))?;
        Some(new)
    } else {
        db.exec(&customer_gc_update(a.customer(), a.amount, 1))?;
        None
    };
    db.exec(&Statement::insert("history", &HISTORY_COLUMNS, vec![history_row(a, &wh[0], &dist[0])]))?;
    Ok(output(&wh, &dist, &cust, balance, data.as_deref()))
}

fn merged_read(db: &mut dyn Exec, rw: &Rewriter, stmts: &[Statement]) -> Result<Vec<ResultSet>, ProgramError> {
    let (merged, map) = rw.merge_selects(stmts).map_err(merge_err)?;
    let rs = db.exec(&merged)?;
    dispatch_results(&rs, &map, stmts.len()).map_err(merge_err)
}

/// Distinct values of `f` over the batch in first-appearance order, with
/// the members that share each.
fn groups<K: PartialEq + Copy>(batch: &[PaymentArgs], members: &[usize], f: impl Fn(&PaymentArgs) -> K) -> Vec<(K, Vec<usize>)> {
    let mut out: Vec<(K, Vec<usize>)> = Vec::new();
    for &k in members {
        let key = f(&batch[k]);
        match out.iter_mut().find(|(g, _)| *g == key) {
            Some((_, m)) => m.push(k),
            None => out.push((key, vec![k])),
        }
    }
    out
}

fn total(batch: &[PaymentArgs], members: &[usize]) -> Result<Decimal, ProgramError> {
    members.iter().try_fold(Decimal::ZERO, |acc, &k| acc.checked_add(batch[k].amount).ok_or_else(overflow))
}

pub fn run_merged(db: &mut dyn Exec, rw: &Rewriter, batch: &[PaymentArgs]) -> Result<Vec<Json>, ProgramError> {
    let all: Vec<usize> = (0..batch.len()).collect();

    // 1-4: year-to-date totals, aggregated per warehouse and per district.
    let wh_updates: Vec<Statement> = batch.iter().map(|a| warehouse_ytd(a.w_id, a.amount)).collect();
    db.exec(&rw.merge_updates(&wh_updates).map_err(merge_err)?)?;
    let whs = merged_read(db, rw, &batch.iter().map(|a| warehouse_select(a.w_id)).collect::<Vec<_>>())?;
    let d_updates: Vec<Statement> = batch.iter().map(|a| district_ytd(a.w_id, a.d_id, a.amount)).collect();
    db.exec(&rw.merge_updates(&d_updates).map_err(merge_err)?)?;
    let dists = merged_read(db, rw, &batch.iter().map(|a| district_select(a.w_id, a.d_id)).collect::<Vec<_>>())?;

    // 5: all customers, then split by credit.
    let custs = merged_read(db, rw, &batch.iter().map(|a| customer_select(a.customer())).collect::<Vec<_>>())?;
    let mut bc = Vec::new();
    let mut gc = Vec::new();
    for k in 0..batch.len() {
        if single(&custs[k], "customer")?[2].as_str() == Some("BC") {
            bc.push(k);
        } else {
            gc.push(k);
        }
    }

    // Balances each member would have observed, replayed in batch order.
    let mut balances: HashMap<(i64, i64, i64), Decimal> = HashMap::new();
    let mut after = vec![Decimal::ZERO; batch.len()];
    for &k in &all {
        let c = batch[k].customer();
        let cur = match balances.get(&c) {
            Some(b) => *b,
            None => as_dec(&single(&custs[k], "customer")?[4])?,
        };
        let next = cur.checked_sub(batch[k].amount).ok_or_else(overflow)?;
        balances.insert(c, next);
        after[k] = next;
    }

    // 6-7: bad-credit customers, one CASE update with their final c_data.
    let mut data: Vec<Option<String>> = vec![None; batch.len()];
    if !bc.is_empty() {
        let rows = merged_read(db, rw, &bc.iter().map(|&k| customer_data_select(batch[k].customer())).collect::<Vec<_>>())?;
        let mut current: HashMap<(i64, i64, i64), String> = HashMap::new();
        for (j, &k) in bc.iter().enumerate() {
            let c = batch[k].customer();
            let old = match current.get(&c) {
                Some(s) => s.clone(),
                None => single(&rows[j], "customer")?[0].as_str().unwrap_or("").to_string(),
            };
            let new = bc_data(&batch[k], &old);
            current.insert(c, new.clone());
            data[k] = Some(new);
        }
        let updates: Vec<Statement> = groups(batch, &bc, PaymentArgs::customer)
            .into_iter()
            .map(|(c, m)| Ok(customer_bc_update(c, total(batch, &m)?, m.len() as i64, &current[&c])))
            .collect::<Result<_, ProgramError>>()?;
        db.exec(&rw.merge_updates(&updates).map_err(merge_err)?)?;
    }

    // 8: good-credit customers.
    if !gc.is_empty() {
        let updates: Vec<Statement> = gc.iter().map(|&k| customer_gc_update(batch[k].customer(), batch[k].amount, 1)).collect();
        db.exec(&rw.merge_updates(&updates).map_err(merge_err)?)?;
    }

    // 9: history.
    let mut hist = Vec::with_capacity(batch.len());
    for (k, a) in batch.iter().enumerate() {
        hist.push(Statement::insert(
            "history",
            &HISTORY_COLUMNS,
            vec![history_row(a, &single(&whs[k], "warehouse")?[0], &single(&dists[k], "district")?[0])],
        ));
    }
    db.exec(&merge_inserts(&hist).map_err(merge_err)?)?;

    all.iter()
        .map(|&k| {
            Ok(output(
                single(&whs[k], "warehouse")?,
                single(&dists[k], "district")?,
                single(&custs[k], "customer")?,
                after[k],
                data[k].as_deref(),
            ))
        })
        .collect()
}

/// Service program for payment, keyed by (w_id, d_id).
pub struct Payment {
    rewriter: Rewriter,
}

impl Payment {
    pub fn new() -> Self {
        Payment { rewriter: Rewriter::new() }
    }

    pub fn with_rewriter(rewriter: Rewriter) -> Self {
        Payment { rewriter }
    }
}

impl Default for Payment {
    fn default() -> Self {
        Self::new()
    }
}

impl TransactionProgram for Payment {
    fn name(&self) -> &str {
        "payment"
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        let a = PaymentArgs::from_args(args)?;
        Ok(vec![int(a.w_id), int(a.d_id)])
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        run_original(txn, &PaymentArgs::from_args(args)?)
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        let batch: Vec<PaymentArgs> = batch.iter().map(|a| PaymentArgs::from_args(a)).collect::<Result<_, _>>()?;
        run_merged(txn, &self.rewriter, &batch)
    }
}
