use txmerge_core::analyzer::{self, GroupClass};
use txmerge_core::{build_template, render, Dialect, Schema, TransactionTemplate};

fn tpcc() -> Schema {
    Schema::from_json_str(include_str!("../../../templates/tpcc_schema.json")).unwrap()
}

fn load(text: &str, schema: &Schema) -> TransactionTemplate {
    build_template(text, schema).unwrap()
}

fn neworder() -> TransactionTemplate {
    load(include_str!("../../../templates/neworder.json"), &tpcc())
}

fn payment() -> TransactionTemplate {
    load(include_str!("../../../templates/payment.json"), &tpcc())
}

fn strs(set: &std::collections::BTreeSet<String>) -> Vec<&str> {
    set.iter().map(String::as_str).collect()
}

#[test]
fn neworder_template_shape() {
    let t = neworder();
    assert_eq!(t.len(), 10);
    assert_eq!(t.partition_key, vec!["w_id", "d_id"]);
    assert_eq!(
        render(t.statement(3), Dialect::MySql),
        "SELECT d_next_o_id AS next_id, d_tax FROM district WHERE d_w_id = ? AND d_id = ? FOR UPDATE"
    );
}

#[test]
fn access_sets_of_district_lines() {
    let t = neworder();
    let line4 = t.statement(4).access_sets();
    assert_eq!(strs(&line4.reads), vec!["d_id", "d_next_o_id", "d_w_id"]);
    assert_eq!(strs(&line4.writes), vec!["d_next_o_id"]);
    let line2 = t.statement(2).access_sets();
    assert_eq!(strs(&line2.reads), vec!["w_id", "w_tax"]);
    assert!(line2.writes.is_empty());
    assert!(t.statement(3).access_sets().locking);
    assert_eq!(t.statement(4).access_sets(), t.statement(4).access_sets());
}

#[test]
fn history_insert_writes_every_history_column() {
    let schema = tpcc();
    let t = payment();
    let table = schema.table("history").unwrap();
    let all: Vec<&str> = {
        let mut v: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
        v.sort();
        v
    };
    assert_eq!(strs(&t.statement(9).access_sets().writes), all);
}

#[test]
fn conflict_examples() {
    let t = neworder();
    assert!(analyzer::conflicts(t.statement(3), t.statement(4)));
    assert!(!analyzer::conflicts(t.statement(5), t.statement(1)));
    assert!(!analyzer::conflicts(t.statement(1), t.statement(1)));
}

#[test]
fn neworder_groups() {
    let r = analyzer::group(&neworder());
    assert_eq!(r.multi_groups(), vec![(3, 4), (8, 10)]);
    assert_eq!(r.groups.len(), 7);
    for g in &r.groups {
        assert_eq!(g.class == GroupClass::SequentialGroup, g.lo < g.hi);
        assert_eq!(g.developer_merged, g.lo < g.hi);
        if g.lo < g.hi {
            assert!(!g.witnesses.is_empty());
            assert!(g.witnesses.iter().all(|w| g.contains(w.a) && g.contains(w.b)));
        }
    }
    let proof = analyzer::verify_interleaving(&r).unwrap();
    assert_eq!(proof.schedule.len(), 14);
    assert!(proof.edges.iter().all(|e| e.from == 1));
}

#[test]
fn payment_groups() {
    let r = analyzer::group(&payment());
    assert_eq!(r.multi_groups(), vec![(6, 8)]);
    assert!(analyzer::verify_interleaving(&r).is_ok());
}

#[test]
fn spree_add_item_groups_follow_the_interval_rule() {
    let schema = Schema::from_json_str(include_str!("../../../templates/spree_schema.json")).unwrap();
    let t = load(include_str!("../../../templates/spree_add_item.json"), &schema);
    let r = analyzer::group(&t);
    assert_eq!(r.multi_groups(), vec![(2, 7), (10, 11)]);
}

#[test]
fn order_total_template_loads() {
    let schema = Schema::from_json_str(include_str!("../../../templates/order_total_schema.json")).unwrap();
    let t = load(include_str!("../../../templates/order_total.json"), &schema);
    assert_eq!(t.len(), 5);
    assert!(analyzer::verify_interleaving(&analyzer::group(&t)).is_ok());
}

#[test]
fn access_set_mismatch_is_rejected() {
    let text = include_str!("../../../templates/neworder.json").replacen(
        r#""reads": ["d_w_id", "d_id", "d_next_o_id"], "writes": ["d_next_o_id"]"#,
        r#""reads": ["d_id", "d_next_o_id"], "writes": ["d_next_o_id"]"#,
        1,
    );
    assert!(matches!(build_template(&text, &tpcc()), Err(txmerge_core::ModelError::Validation(_))));
}
