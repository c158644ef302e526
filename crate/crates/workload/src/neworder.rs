//! TPC-C new-order: the per-invocation form and the merged batch form with
//! sequence allocation, shared reads, and CASE stock updates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use txmerge_core::rewrite::{allocate_sequence, dispatch_results, merge_inserts, Rewriter};
use txmerge_core::{Assignment, Decimal, Expr, Operand, Projection, ResultSet, Statement, Value};
use txmerge_engine::Txn;
use txmerge_service::{Args, ProgramError, TransactionProgram};

use crate::exec::Exec;
use crate::tpcc::key;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderLine {
    pub i_id: i64,
    pub supply_w_id: i64,
    pub quantity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewOrderArgs {
    pub w_id: i64,
    pub d_id: i64,
    pub c_id: i64,
    /// Entry timestamp, milliseconds.
    pub entry_d: i64,
    pub items: Vec<OrderLine>,
}

impl NewOrderArgs {
    pub fn to_args(&self) -> Args {
        match serde_json::to_value(self).expect("serializable") {
            Json::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        }
    }

    pub fn from_args(args: &Args) -> Result<Self, ProgramError> {
        serde_json::from_value(Json::Object(args.clone())).map_err(|e| ProgramError::Invalid(e.to_string()))
    }
}

fn int(v: i64) -> Value {
    Value::Int(v)
}

pub fn customer_select(w: i64, d: i64, c: i64) -> Statement {
    Statement::select_columns("customer", &["c_discount", "c_last", "c_credit"])
        .filter(key(&[("c_w_id", int(w)), ("c_d_id", int(d)), ("c_id", int(c))]))
}

pub fn warehouse_select(w: i64) -> Statement {
    Statement::select_columns("warehouse", &["w_tax"]).filter(key(&[("w_id", int(w))]))
}

pub fn district_select(w: i64, d: i64) -> Statement {
    Statement::select("district", vec![Projection::column("d_next_o_id").alias("next_id"), Projection::column("d_tax")])
        .filter(key(&[("d_w_id", int(w)), ("d_id", int(d))]))
        .for_update()
}

pub fn district_advance(w: i64, d: i64, n: i64) -> Statement {
    Statement::update("district", vec![Assignment::add_value("d_next_o_id", n)])
        .filter(key(&[("d_w_id", int(w)), ("d_id", int(d))]))
}

fn oorder_insert(rows: Vec<Vec<Operand>>) -> Statement {
    Statement::insert("oorder", &["o_id", "o_w_id", "o_d_id", "o_c_id", "o_entry_d", "o_ol_cnt", "o_all_local"], rows)
}

fn new_order_insert(rows: Vec<Vec<Operand>>) -> Statement {
    Statement::insert("new_order", &["no_o_id", "no_w_id", "no_d_id"], rows)
}

pub fn item_select(i: i64) -> Statement {
    Statement::select_columns("item", &["i_price", "i_name", "i_data"]).filter(key(&[("i_id", int(i))]))
}

pub fn stock_select(w: i64, i: i64) -> Statement {
    Statement::select_columns("stock", &["s_quantity", "s_dist_info", "s_data"])
        .filter(key(&[("s_w_id", int(w)), ("s_i_id", int(i))]))
        .for_update()
}

const ORDER_LINE_COLUMNS: [&str; 9] =
    ["ol_w_id", "ol_d_id", "ol_o_id", "ol_number", "ol_i_id", "ol_supply_w_id", "ol_quantity", "ol_amount", "ol_dist_info"];

/// `s_quantity = q, s_ytd += qty, s_order_cnt += orders, s_remote_cnt += remote`.
pub fn stock_update(w: i64, i: i64, quantity: i64, ytd: i64, orders: i64, remote: i64) -> Statement {
    Statement::update(
        "stock",
        vec![
            Assignment::new("s_quantity", Expr::value(quantity)),
            Assignment::add_value("s_ytd", ytd),
            Assignment::add_value("s_order_cnt", orders),
            Assignment::add_value("s_remote_cnt", remote),
        ],
    )
    .filter(key(&[("s_w_id", int(w)), ("s_i_id", int(i))]))
}

/// TPC-C restocking rule.
pub fn next_quantity(current: i64, ordered: i64) -> i64 {
    if current - ordered >= 10 {
        current - ordered
    } else {
        current - ordered + 91
    }
}

fn single<'r>(rs: &'r ResultSet, what: &str) -> Result<&'r [Value], ProgramError> {
    match rs.rows.as_slice() {
        [row] => Ok(row),
        [] => Err(ProgramError::Invalid(format!("{what} not found"))),
        _ => Err(ProgramError::Invalid(format!("{what} matched {} rows", rs.rows.len()))),
    }
}

fn as_int(v: &Value) -> Result<i64, ProgramError> {
    v.as_int().ok_or_else(|| ProgramError::Invalid(format!("expected integer, got {v:?}")))
}

fn as_dec(v: &Value) -> Result<Decimal, ProgramError> {
    v.as_decimal().ok_or_else(|| ProgramError::Invalid(format!("expected decimal, got {v:?}")))
}

fn overflow() -> ProgramError {
    ProgramError::Invalid("decimal overflow".into())
}

fn merge_err(e: impl std::fmt::Display) -> ProgramError {
    ProgramError::Merge(e.to_string())
}

/// What one order line saw and produced.
struct LineOutcome {
    i_id: i64,
    i_name: Value,
    price: Decimal,
    quantity: i64,
    s_quantity: i64,
    amount: Decimal,
}

fn output(cust: &[Value], w_tax: &Value, d_tax: &Value, o_id: i64, lines: &[LineOutcome]) -> Json {
    let total = lines.iter().try_fold(Decimal::ZERO, |acc, l| acc.checked_add(l.amount));
    json!({
        "o_id": o_id,
        "c_discount": cust[0].to_plain_json(),
        "c_last": cust[1].to_plain_json(),
        "c_credit": cust[2].to_plain_json(),
        "w_tax": w_tax.to_plain_json(),
        "d_tax": d_tax.to_plain_json(),
        "amount_total": total.map(|t| t.to_string()),
        "lines": lines.iter().map(|l| json!({
            "i_id": l.i_id,
            "i_name": l.i_name.to_plain_json(),
            "price": l.price.to_string(),
            "quantity": l.quantity,
            "s_quantity": l.s_quantity,
            "amount": l.amount.to_string(),
        })).collect::<Vec<_>>(),
    })
}

/// Statement-for-statement the original new-order transaction.
pub fn run_original(db: &mut dyn Exec, a: &NewOrderArgs) -> Result<Json, ProgramError> {
    let cust = db.exec(&customer_select(a.w_id, a.d_id, a.c_id))?;
    let cust = single(&cust, "customer")?.to_vec();
    let wh = db.exec(&warehouse_select(a.w_id))?;
    let w_tax = single(&wh, "warehouse")?[0].clone();
    let dist = db.exec(&district_select(a.w_id, a.d_id))?;
    let drow = single(&dist, "district")?;
    let o_id = as_int(&drow[0])?;
    let d_tax = drow[1].clone();
    db.exec(&district_advance(a.w_id, a.d_id, 1))?;
    let all_local = i64::from(a.items.iter().all(|l| l.supply_w_id == a.w_id));
    db.exec(&oorder_insert(vec![order_row(a, o_id, all_local)]))?;
    db.exec(&new_order_insert(vec![vec![Operand::value(o_id), Operand::value(a.w_id), Operand::value(a.d_id)]]))?;
    let mut lines = Vec::with_capacity(a.items.len());
    for (n, line) in a.items.iter().enumerate() {
        let item = db.exec(&item_select(line.i_id))?;
        let item = single(&item, "item")?.to_vec();
        let stock = db.exec(&stock_select(line.supply_w_id, line.i_id))?;
        let stock = single(&stock, "stock")?.to_vec();
        let price = as_dec(&item[0])?;
        let amount = price.checked_mul_int(line.quantity).ok_or_else(overflow)?;
        db.exec(&Statement::insert(
            "order_line",
            &ORDER_LINE_COLUMNS,
            vec![line_row(a, o_id, n, line, amount, &stock[1])],
        ))?;
        let s_quantity = as_int(&stock[0])?;
        let remote = i64::from(line.supply_w_id != a.w_id);
        db.exec(&stock_update(line.supply_w_id, line.i_id, next_quantity(s_quantity, line.quantity), line.quantity, 1, remote))?;
        lines.push(LineOutcome { i_id: line.i_id, i_name: item[1].clone(), price, quantity: line.quantity, s_quantity, amount });
    }
    Ok(output(&cust, &w_tax, &d_tax, o_id, &lines))
}

fn order_row(a: &NewOrderArgs, o_id: i64, all_local: i64) -> Vec<Operand> {
    vec![
        Operand::value(o_id),
        Operand::value(a.w_id),
        Operand::value(a.d_id),
        Operand::value(a.c_id),
        Operand::Value(Value::Timestamp(a.entry_d)),
        Operand::value(a.items.len() as i64),
        Operand::value(all_local),
    ]
}

fn line_row(a: &NewOrderArgs, o_id: i64, n: usize, line: &OrderLine, amount: Decimal, dist_info: &Value) -> Vec<Operand> {
    vec![
        Operand::value(a.w_id),
        Operand::value(a.d_id),
        Operand::value(o_id),
        Operand::value(n as i64 + 1),
        Operand::value(line.i_id),
        Operand::value(line.supply_w_id),
        Operand::value(line.quantity),
        Operand::Value(Value::Decimal(amount)),
        Operand::Value(dist_info.clone()),
    ]
}

/// Runs `stmts` as one merged select and hands each instance its rows.
fn merged_read(db: &mut dyn Exec, rw: &Rewriter, stmts: &[Statement]) -> Result<Vec<ResultSet>, ProgramError> {
    let (merged, map) = rw.merge_selects(stmts).map_err(merge_err)?;
    let rs = db.exec(&merged)?;
    dispatch_results(&rs, &map, stmts.len()).map_err(merge_err)
}

/// The merged form: one statement per source line regardless of batch
/// size. Members may target different districts; ordering effects between
/// members (order ids, stock levels) are replayed in batch order.
pub fn run_merged(db: &mut dyn Exec, rw: &Rewriter, batch: &[NewOrderArgs]) -> Result<Vec<Json>, ProgramError> {
    let stock_rw = rw.clone().key(&["s_w_id", "s_i_id"]);

    // 1-2: customer and warehouse reads.
    let custs = merged_read(db, rw, &batch.iter().map(|a| customer_select(a.w_id, a.d_id, a.c_id)).collect::<Vec<_>>())?;
    let whs = merged_read(db, rw, &batch.iter().map(|a| warehouse_select(a.w_id)).collect::<Vec<_>>())?;

    // 3-4: read each district's counter once, hand out consecutive ids, and
    // advance the counter by the number of members.
    let dists = merged_read(db, rw, &batch.iter().map(|a| district_select(a.w_id, a.d_id)).collect::<Vec<_>>())?;
    let mut by_district: Vec<((i64, i64), Vec<usize>)> = Vec::new();
    for (k, a) in batch.iter().enumerate() {
        match by_district.iter_mut().find(|(d, _)| *d == (a.w_id, a.d_id)) {
            Some((_, members)) => members.push(k),
            None => by_district.push(((a.w_id, a.d_id), vec![k])),
        }
    }
    let mut o_ids = vec![0; batch.len()];
    for (_, members) in &by_district {
        let base = as_int(&single(&dists[members[0]], "district")?[0])?;
        let seq = allocate_sequence(base, members.len());
        for (&k, id) in members.iter().zip(seq.values) {
            o_ids[k] = id;
        }
    }
    let advances: Vec<Statement> = batch.iter().map(|a| district_advance(a.w_id, a.d_id, 1)).collect();
    db.exec(&rw.merge_updates(&advances).map_err(merge_err)?)?;

    // 5-6: order headers.
    let orders: Vec<Statement> = batch
        .iter()
        .zip(&o_ids)
        .map(|(a, &o)| oorder_insert(vec![order_row(a, o, i64::from(a.items.iter().all(|l| l.supply_w_id == a.w_id)))]))
        .collect();
    db.exec(&merge_inserts(&orders).map_err(merge_err)?)?;
    let news: Vec<Statement> = batch
        .iter()
        .zip(&o_ids)
        .map(|(a, &o)| new_order_insert(vec![vec![Operand::value(o), Operand::value(a.w_id), Operand::value(a.d_id)]]))
        .collect();
    db.exec(&merge_inserts(&news).map_err(merge_err)?)?;

    // 7-8: all items and stock rows of all lines at once.
    let flat: Vec<(usize, usize, &OrderLine)> =
        batch.iter().enumerate().flat_map(|(k, a)| a.items.iter().enumerate().map(move |(n, l)| (k, n, l))).collect();
    let items = merged_read(db, rw, &flat.iter().map(|(_, _, l)| item_select(l.i_id)).collect::<Vec<_>>())?;
    let stocks = merged_read(db, &stock_rw, &flat.iter().map(|(_, _, l)| stock_select(l.supply_w_id, l.i_id)).collect::<Vec<_>>())?;

    // Replay stock changes in batch order.
    struct StockState {
        quantity: i64,
        ytd: i64,
        orders: i64,
        remote: i64,
    }
    let mut stock_order: Vec<(i64, i64)> = Vec::new();
    let mut state: HashMap<(i64, i64), StockState> = HashMap::new();
    let mut lines: Vec<Vec<LineOutcome>> = batch.iter().map(|_| Vec::new()).collect();
    let mut line_rows = Vec::with_capacity(flat.len());
    for (j, &(k, n, line)) in flat.iter().enumerate() {
        let a = &batch[k];
        let item = single(&items[j], "item")?;
        let stock = single(&stocks[j], "stock")?;
        let price = as_dec(&item[0])?;
        let amount = price.checked_mul_int(line.quantity).ok_or_else(overflow)?;
        let skey = (line.supply_w_id, line.i_id);
        if let std::collections::hash_map::Entry::Vacant(e) = state.entry(skey) {
            stock_order.push(skey);
            e.insert(StockState { quantity: as_int(&stock[0])?, ytd: 0, orders: 0, remote: 0 });
        }
        let st = state.get_mut(&skey).expect("inserted above");
        let seen = st.quantity;
        st.quantity = next_quantity(seen, line.quantity);
        st.ytd += line.quantity;
        st.orders += 1;
        st.remote += i64::from(line.supply_w_id != a.w_id);
        line_rows.push(line_row(a, o_ids[k], n, line, amount, &stock[1]));
        lines[k].push(LineOutcome { i_id: line.i_id, i_name: item[1].clone(), price, quantity: line.quantity, s_quantity: seen, amount });
    }

    // 9-10: all order lines, then one CASE update over the touched stock.
    if !line_rows.is_empty() {
        db.exec(&Statement::insert("order_line", &ORDER_LINE_COLUMNS, line_rows))?;
        let updates: Vec<Statement> = stock_order
            .iter()
            .map(|&(w, i)| {
                let st = &state[&(w, i)];
                stock_update(w, i, st.quantity, st.ytd, st.orders, st.remote)
            })
            .collect();
        db.exec(&stock_rw.merge_updates(&updates).map_err(merge_err)?)?;
    }

    batch
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let cust = single(&custs[k], "customer")?;
            let w_tax = &single(&whs[k], "warehouse")?[0];
            let d_tax = &single(&dists[k], "district")?[1];
            Ok(output(cust, w_tax, d_tax, o_ids[k], &lines[k]))
        })
        .collect()
}

/// Service program for new-order, keyed by (w_id, d_id).
pub struct NewOrder {
    rewriter: Rewriter,
}

impl NewOrder {
    pub fn new() -> Self {
        NewOrder { rewriter: Rewriter::new() }
    }

    pub fn with_rewriter(rewriter: Rewriter) -> Self {
        NewOrder { rewriter }
    }
}

impl Default for NewOrder {
    fn default() -> Self {
        Self::new()
    }
}

impl TransactionProgram for NewOrder {
    fn name(&self) -> &str {
        "neworder"
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        let a = NewOrderArgs::from_args(args)?;
        Ok(vec![int(a.w_id), int(a.d_id)])
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        run_original(txn, &NewOrderArgs::from_args(args)?)
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        let batch: Vec<NewOrderArgs> = batch.iter().map(|a| NewOrderArgs::from_args(a)).collect::<Result<_, _>>()?;
        run_merged(txn, &self.rewriter, &batch)
    }
}
