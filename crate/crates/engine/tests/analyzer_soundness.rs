//! Executing two instances of a random template in group-interleaved order
//! must leave the same state as running them one after the other.

use std::collections::HashMap;

use proptest::prelude::*;
use txmerge_core::analyzer::{group_statements, verify_interleaving};
use txmerge_core::{
    Assignment, ColumnDef, ColumnType, Expr, Operand, Predicate, Schema, Statement, TableSchema, Value,
};
use txmerge_engine::{Engine, EngineError};

fn schema() -> Schema {
    let col = |name: &str, pk: bool| ColumnDef { name: name.into(), ty: ColumnType::Int, primary_key: pk };
    Schema { tables: vec![TableSchema { name: "r".into(), columns: vec![col("id", true), col("a", false), col("b", false)] }] }
}

#[derive(Debug, Clone)]
enum Shape {
    SelectById(&'static str),
    SelectByB,
    AddById(&'static str),
    SetById(&'static str),
    SetByB(&'static str),
    Insert,
    DeleteById,
    DeleteByA,
}

fn shape() -> impl Strategy<Value = Shape> {
    let col = || prop::sample::select(vec!["a", "b"]);
    prop_oneof![
        col().prop_map(Shape::SelectById),
        Just(Shape::SelectByB),
        col().prop_map(Shape::AddById),
        col().prop_map(Shape::SetById),
        Just(Shape::SetByB("a")),
        Just(Shape::Insert),
        Just(Shape::DeleteById),
        Just(Shape::DeleteByA),
    ]
}

fn statement(i: usize, s: &Shape, schema: &Schema) -> Statement {
    let k = format!("k{i}");
    let v = format!("v{i}");
    let by_id = Predicate::eq_param("id", k.as_str());
    let mut st = match s {
        Shape::SelectById(c) => Statement::select_columns("r", &[c]).filter(by_id),
        Shape::SelectByB => Statement::select_columns("r", &["a"]).filter(Predicate::eq_param("b", v.as_str())),
        Shape::AddById(c) => Statement::update("r", vec![Assignment::add_param(c, &v)]).filter(by_id),
        Shape::SetById(c) => Statement::update("r", vec![Assignment::new(*c, Expr::param(v.as_str()))]).filter(by_id),
        Shape::SetByB(c) => {
            Statement::update("r", vec![Assignment::new(*c, Expr::param(v.as_str()))]).filter(Predicate::eq_param("b", k.as_str()))
        }
        Shape::Insert => Statement::insert(
            "r",
            &["id", "a", "b"],
            vec![vec![Operand::param(k.as_str()), Operand::param(v.as_str()), Operand::param(v.as_str())]],
        ),
        Shape::DeleteById => Statement::delete("r").filter(by_id),
        Shape::DeleteByA => Statement::delete("r").filter(Predicate::eq_param("a", v.as_str())),
    };
    st.widen_delete(schema).unwrap();
    st
}

fn instance_args(n: usize) -> impl Strategy<Value = HashMap<String, Value>> {
    prop::collection::vec((1i64..=5, -2i64..=3), n).prop_map(|vals| {
        let mut m = HashMap::new();
        for (i, (k, v)) in vals.into_iter().enumerate() {
            m.insert(format!("k{i}"), Value::Int(k));
            m.insert(format!("v{i}"), Value::Int(v));
        }
        m
    })
}

fn base(rows: &[(i64, i64)]) -> Engine {
    let e = Engine::new(schema());
    e.load("r", rows.iter().enumerate().map(|(i, (a, b))| vec![Value::Int(i as i64 + 1), Value::Int(*a), Value::Int(*b)]))
        .unwrap();
    e
}

fn run(db: &Engine, steps: &[(usize, usize)], stmts: &[Statement], args: &[HashMap<String, Value>; 2]) {
    db.run(|t| {
        for &(inst, idx) in steps {
            let bound = stmts[idx].bind(&|p: &str| args[inst].get(p).cloned()).unwrap();
            match t.execute(&bound) {
                Ok(_) | Err(EngineError::ConstraintViolation(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    })
    .unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn interleaved_groups_equal_serial(
        shapes in prop::collection::vec(shape(), 1..=6),
        rows in prop::collection::vec((-2i64..=3, -2i64..=3), 0..=4),
        a1 in instance_args(6),
        a2 in instance_args(6),
    ) {
        let schema = schema();
        let stmts: Vec<Statement> = shapes.iter().enumerate().map(|(i, s)| statement(i, s, &schema)).collect();
        let report = group_statements("random", &stmts, &[]);
        let proof = verify_interleaving(&report).unwrap();
        let args = [a1, a2];

        let interleaved: Vec<(usize, usize)> = proof
            .schedule
            .iter()
            .flat_map(|s| (s.lo..=s.hi).map(move |i| (s.instance as usize - 1, i - 1)))
            .collect();
        let serial: Vec<(usize, usize)> = (0..2).flat_map(|inst| (0..stmts.len()).map(move |i| (inst, i))).collect();

        let db = base(&rows);
        let x = db.fork().unwrap();
        run(&x, &interleaved, &stmts, &args);
        let y = db.fork().unwrap();
        run(&y, &serial, &stmts, &args);
        prop_assert_eq!(x.snapshot().unwrap().lines, y.snapshot().unwrap().lines, "groups {:?}", report.multi_groups());
    }
}
