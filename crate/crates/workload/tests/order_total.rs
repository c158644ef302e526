use proptest::prelude::*;
use txmerge_core::rewrite::{dispatch_results, Rewriter};
use txmerge_core::{Decimal, Value};
use txmerge_engine::{Engine, EngineConfig};
use txmerge_workload::exec::{Exec, Recording};
use txmerge_workload::gen::OrderGen;
use txmerge_workload::order_total::{self, count_select, AddItemArgs};

fn item(order_id: i64, line_no: i64, quantity: i64, cents: i64) -> AddItemArgs {
    AddItemArgs { order_id, line_no, variant_id: 1, quantity, price: Decimal::from_cents(cents), now: 100 + line_no }
}

fn run_merged(e: &Engine, batch: &[AddItemArgs]) -> Vec<serde_json::Value> {
    e.run(|t| Ok(order_total::run_merged(t, &Rewriter::new(), batch).unwrap())).unwrap()
}

/// Sums over the stored lines of `order` with `line_no <= upto`.
fn scan_sums(e: &Engine, order: i64, upto: i64) -> (i64, Decimal) {
    let mut count = 0;
    let mut total = Decimal::ZERO;
    for r in e.rows("line_items").unwrap() {
        if r[0] == Value::Int(order) && r[1].as_int().unwrap() <= upto {
            let q = r[3].as_int().unwrap();
            count += q;
            total = total.checked_add(r[4].as_decimal().unwrap().checked_mul_int(q).unwrap()).unwrap();
        }
    }
    (count, total)
}

#[test]
fn each_member_receives_its_own_sums() {
    let e = order_total::load(2, EngineConfig::default()).unwrap();
    run_merged(&e, &[item(1, 1, 2, 1_000), item(2, 2, 1, 250)]);
    let batch = [item(1, 3, 3, 199), item(2, 4, 5, 1_000), item(1, 5, 1, 50)];
    let out = run_merged(&e, &batch);
    for (a, o) in batch.iter().zip(&out) {
        let (count, total) = scan_sums(&e, a.order_id, a.line_no);
        assert_eq!(o["item_count"].as_i64().unwrap(), count);
        assert_eq!(o["item_total"].as_str().unwrap(), total.to_string());
    }
    // The stored order row carries the sums of its last member.
    let (count, total) = scan_sums(&e, 1, 5);
    assert_eq!(e.value("orders", &[Value::Int(1)], "item_count").unwrap(), Some(Value::Int(count)));
    assert_eq!(e.value("orders", &[Value::Int(1)], "item_total").unwrap(), Some(Value::Decimal(total)));
}

#[test]
fn batch_of_one_uses_a_plain_sum() {
    let e = order_total::load(1, EngineConfig::default()).unwrap();
    let mut txn = e.begin();
    let mut rec = Recording::new(&mut txn);
    order_total::run_merged(&mut rec, &Rewriter::new(), &[item(1, 1, 2, 300)]).unwrap();
    let selects: Vec<_> = rec.log.iter().filter(|s| s.kind == txmerge_core::StatementKind::Select).collect();
    assert_eq!(selects.len(), 2);
    assert!(selects.iter().all(|s| s.group_by.is_empty()));
}

#[test]
fn order_without_lines_gets_no_sum_row() {
    let e = order_total::load(2, EngineConfig::default()).unwrap();
    run_merged(&e, &[item(1, 1, 2, 300)]);
    let stmts = [count_select(1), count_select(2)];
    let (merged, map) = Rewriter::new().merge_selects(&stmts).unwrap();
    let rs = e.run(|t| t.exec(&merged)).unwrap();
    let parts = dispatch_results(&rs, &map, 2).unwrap();
    assert_eq!(parts[0].rows.len(), 1);
    assert!(parts[1].rows.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn merged_equals_serial(seed in any::<u64>(), n in 1usize..10, orders in 1i64..4) {
        let base = order_total::load(orders, EngineConfig::default()).unwrap();
        let mut gen = OrderGen::new(orders, seed, 0);
        let batch: Vec<AddItemArgs> = (0..n).map(|_| gen.add_item()).collect();
        let merged = base.fork().unwrap();
        let out = run_merged(&merged, &batch);
        let serial = base.fork().unwrap();
        let expect: Vec<_> = batch.iter().map(|a| serial.run(|t| Ok(order_total::run_original(t, a).unwrap())).unwrap()).collect();
        prop_assert_eq!(expect, out);
        prop_assert_eq!(serial.digest().unwrap(), merged.digest().unwrap());
    }
}
