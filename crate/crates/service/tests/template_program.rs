use txmerge_core::{Assignment, Expr, Operand, Predicate, Statement, TransactionTemplate, Value};
use txmerge_engine::serial::{kv_engine, TABLE};
use txmerge_engine::EngineConfig;
use txmerge_service::program::args;
use txmerge_service::{Args, TemplateProgram, TransactionProgram};

fn read_then_bump() -> TransactionTemplate {
    TransactionTemplate::new(
        "read_then_bump",
        &["id"],
        vec![
            Statement::select_columns(TABLE, &["v"]).filter(Predicate::eq_param("id", "id")),
            Statement::update(TABLE, vec![Assignment::new("v", Expr::add(Expr::col("v"), Expr::param("d")))])
                .filter(Predicate::eq_param("id", "id")),
            Statement::insert(TABLE, &["id", "v"], vec![vec![Operand::param("new_id"), Operand::param("d")]]),
        ],
    )
}

fn invocation(id: i64, d: i64, new_id: i64) -> Args {
    args([("id", id.into()), ("d", d.into()), ("new_id", new_id.into())])
}

#[test]
fn merged_batches_match_sequential_originals() {
    let base = kv_engine(6, EngineConfig::default());
    let prog = TemplateProgram::new(read_then_bump());
    let batches: Vec<Vec<Args>> = vec![
        vec![invocation(1, 5, 101)],
        vec![invocation(1, 5, 101), invocation(2, 3, 102)],
        vec![invocation(1, 5, 101), invocation(1, 2, 102), invocation(3, 1, 103)],
        vec![invocation(4, 1, 101), invocation(5, 1, 102), invocation(4, 7, 103), invocation(6, 2, 104)],
    ];
    for batch in batches {
        let (a, b) = (base.fork().unwrap(), base.fork().unwrap());
        let seq: Vec<_> = batch.iter().map(|x| a.run(|t| prog.execute_original(t, x).map_err(|e| match e {
            txmerge_service::ProgramError::Engine(e) => e,
            other => panic!("{other}"),
        })).unwrap()).collect();
        let refs: Vec<&Args> = batch.iter().collect();
        let mut txn = b.begin();
        let merged = prog.execute_merged(&mut txn, &refs).unwrap();
        txn.commit().unwrap();
        assert_eq!(merged, seq, "batch {batch:?}");
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }
    assert_eq!(prog.partition_key(&invocation(3, 0, 0)).unwrap(), vec![Value::Int(3)]);
}
