use std::sync::Arc;
use std::time::Duration;

use txmerge_core::rewrite::Rewriter;
use txmerge_core::{StatementKind, Value};
use txmerge_engine::EngineConfig;
use txmerge_service::{BatchConfig, Service, Status, TransactionProgram};
use txmerge_workload::micro::{self, increment, increment_args, micro_args, statement, Increment, MicroKind, MicroMode, MicroProgram};

#[test]
fn loader_fills_ids_one_to_n() {
    let e = micro::load(10_000, EngineConfig::default());
    let rows = e.rows(micro::TABLE).unwrap();
    assert_eq!(rows.len(), 10_000);
    assert_eq!(rows.first().unwrap()[0], Value::Int(1));
    assert_eq!(rows.last().unwrap()[0], Value::Int(10_000));
}

#[test]
fn merged_update_of_32_distinct_rows_is_one_statement() {
    let e = micro::load(100, EngineConfig::default());
    let stmts: Vec<_> = (1..=32).map(|id| statement(MicroKind::Update, id * 3, 7)).collect();
    for (mode, want) in [(MicroMode::Original, 32), (MicroMode::Batched, 32), (MicroMode::Merged, 1)] {
        let before = e.stats().statements("micro", StatementKind::Update);
        e.run(|t| micro::run_batch(t, &Rewriter::new(), mode, &stmts)).unwrap();
        assert_eq!(e.stats().statements("micro", StatementKind::Update) - before, want, "{mode:?}");
    }
    for id in 1..=32 {
        assert_eq!(e.value("micro", &[Value::Int(id * 3)], "value").unwrap(), Some(Value::Int(7)));
    }
}

#[test]
fn every_kind_merges_to_one_statement_with_the_same_effect() {
    for kind in MicroKind::ALL {
        let a = micro::load(50, EngineConfig::default());
        let b = a.fork().unwrap();
        let ids: Vec<i64> = match kind {
            MicroKind::Insert => (51..59).collect(),
            _ => (1..9).map(|i| i * 5).collect(),
        };
        let stmts: Vec<_> = ids.iter().map(|&id| statement(kind, id, id * 100)).collect();
        let plain = a.run(|t| micro::run_batch(t, &Rewriter::new(), MicroMode::Original, &stmts)).unwrap();
        let before = b.stats().statements_executed;
        let merged = b.run(|t| micro::run_batch(t, &Rewriter::new(), MicroMode::Merged, &stmts)).unwrap();
        assert_eq!(b.stats().statements_executed - before, 1, "{kind:?}");
        assert_eq!(a.digest().unwrap(), b.digest().unwrap(), "{kind:?}");
        if kind == MicroKind::Select {
            assert_eq!(plain, merged);
        }
    }
}

#[test]
fn contended_increments_collapse_to_one_delta() {
    let e = micro::load(10, EngineConfig::default());
    let stmts: Vec<_> = (0..10).map(|_| increment(4, 1)).collect();
    let before = e.stats().statements_executed;
    e.run(|t| micro::run_batch(t, &Rewriter::new(), MicroMode::Merged, &stmts)).unwrap();
    assert_eq!(e.stats().statements_executed - before, 1);
    assert_eq!(e.value("micro", &[Value::Int(4)], "value").unwrap(), Some(Value::Int(14)));
}

#[test]
fn single_statement_batches_run_at_the_same_speed() {
    let pts = micro::sweep(MicroKind::Update, 10_000, &[1], 9, Duration::from_millis(30), micro::reference_config(), 5);
    let r = pts[0].ratio;
    assert!((0.9..=1.1).contains(&r), "merged/original at K=1: {r:.3} ({pts:?})");
}

#[test]
fn service_programs_merge_any_rows() {
    let e = micro::load(100, EngineConfig::default());
    let programs: Vec<Arc<dyn TransactionProgram>> =
        vec![Arc::new(MicroProgram::new(MicroKind::Select)), Arc::new(MicroProgram::new(MicroKind::Update)), Arc::new(Increment::new())];
    let svc = Service::new(e, programs, BatchConfig::new(1, 4, 10_000)).unwrap();

    let rx: Vec<_> = [3, 9, 27, 3].iter().map(|&id| svc.submit("micro_select", micro_args(id, 0)).unwrap()).collect();
    let got: Vec<Status> = rx.into_iter().map(|r| r.recv().unwrap()).collect();
    assert_eq!(got, [3, 9, 27, 3].map(|v| Status::Ok(serde_json::json!(v))).to_vec());

    let before = svc.engine().stats().statements_executed;
    let rx: Vec<_> = (0..4).map(|_| svc.submit("micro_increment", increment_args(50, 2)).unwrap()).collect();
    for r in rx {
        assert!(r.recv().unwrap().is_ok());
    }
    assert_eq!(svc.engine().stats().statements_executed - before, 1);
    assert_eq!(svc.engine().value("micro", &[Value::Int(50)], "value").unwrap(), Some(Value::Int(58)));
    svc.shutdown();
}
