//! Canonical renderings of the merged statements of fixed new-order,
//! payment and add-item batches, compared byte-for-byte against the files
//! in `golden/`.

use std::path::PathBuf;

use txmerge_core::rewrite::Rewriter;
use txmerge_core::{render, Assignment, Decimal, Dialect, Expr, Statement, Value};
use txmerge_engine::{Engine, EngineConfig};
use txmerge_service::ProgramError;

use crate::exec::{Exec, Recording};
use crate::neworder::{self, NewOrderArgs, OrderLine};
use crate::order_total::{self, AddItemArgs};
use crate::payment::{self, PaymentArgs};
use crate::tpcc::{self, key, Scale};

pub const NAMES: [&str; 3] = ["neworder", "payment", "order_total"];

pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("golden").join(format!("{name}.sql"))
}

fn sql(log: &[Statement]) -> String {
    log.iter().map(|s| format!("{};\n", render(s, Dialect::MySql))).collect()
}

/// Runs `body` in a transaction that is rolled back, returning the rendered
/// statements it issued.
fn capture(engine: &Engine, setup: &[Statement], body: impl FnOnce(&mut dyn Exec) -> Result<(), ProgramError>) -> Result<String, String> {
    let mut txn = engine.begin();
    for s in setup {
        txn.execute(s).map_err(|e| e.to_string())?;
    }
    let mut rec = Recording::new(&mut txn);
    body(&mut rec).map_err(|e| e.to_string())?;
    let out = sql(&rec.log);
    txn.abort().map_err(|e| e.to_string())?;
    Ok(out)
}

fn tpcc_fixture() -> Result<Engine, String> {
    tpcc::load(Scale::default(), 1, EngineConfig::default()).map_err(|e| e.to_string())
}

pub fn neworder_batch() -> Vec<NewOrderArgs> {
    let line = |i_id, supply_w_id, quantity| OrderLine { i_id, supply_w_id, quantity };
    vec![
        NewOrderArgs { w_id: 1, d_id: 2, c_id: 7, entry_d: 1_000, items: vec![line(11, 1, 5), line(12, 1, 3)] },
        NewOrderArgs { w_id: 1, d_id: 2, c_id: 8, entry_d: 1_001, items: vec![line(12, 1, 2), line(13, 2, 4)] },
        NewOrderArgs { w_id: 1, d_id: 2, c_id: 9, entry_d: 1_002, items: vec![line(11, 1, 1)] },
    ]
}

/// Three payments to district (1, 1): two good-credit customers and one
/// with bad credit.
pub fn payment_batch() -> Vec<PaymentArgs> {
    let p = |c_id, cents, h_id| PaymentArgs {
        w_id: 1,
        d_id: 1,
        c_w_id: 1,
        c_d_id: 1,
        c_id,
        amount: Decimal::from_cents(cents),
        h_id,
        h_date: 2_000 + h_id,
    };
    vec![p(3, 1_000, 1), p(4, 1_550, 2), p(5, 250, 3)]
}

pub fn add_item_batch() -> Vec<AddItemArgs> {
    let a = |order_id, line_no, variant_id, quantity, cents| AddItemArgs {
        order_id,
        line_no,
        variant_id,
        quantity,
        price: Decimal::from_cents(cents),
        now: 3_000 + line_no,
    };
    vec![a(1, 1, 101, 2, 1_999), a(2, 2, 102, 1, 500), a(1, 3, 103, 4, 250)]
}

pub fn render_golden(name: &str) -> Result<String, String> {
    let rw = Rewriter::new();
    match name {
        "neworder" => capture(&tpcc_fixture()?, &[], |db| neworder::run_merged(db, &rw, &neworder_batch()).map(drop)),
        "payment" => {
            let bad = Statement::update("customer", vec![Assignment::new("c_credit", Expr::Value(Value::str("BC")))])
                .filter(key(&[("c_w_id", Value::Int(1)), ("c_d_id", Value::Int(1)), ("c_id", Value::Int(5))]));
            let good = Statement::update("customer", vec![Assignment::new("c_credit", Expr::Value(Value::str("GC")))])
                .filter(key(&[("c_w_id", Value::Int(1)), ("c_d_id", Value::Int(1))]));
            capture(&tpcc_fixture()?, &[good, bad], |db| payment::run_merged(db, &rw, &payment_batch()).map(drop))
        }
        "order_total" => {
            let engine = order_total::load(3, EngineConfig::default()).map_err(|e| e.to_string())?;
            capture(&engine, &[], |db| order_total::run_merged(db, &rw, &add_item_batch()).map(drop))
        }
        other => Err(format!("no golden named {other}")),
    }
}
