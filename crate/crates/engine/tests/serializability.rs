use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txmerge_engine::serial::{check_trial, kv_engine, random_program, Op};
use txmerge_engine::EngineConfig;

fn config() -> EngineConfig {
    EngineConfig { lock_timeout: Duration::from_millis(40), ..Default::default() }
}

#[test]
fn random_workloads_match_a_serial_order() {
    let base = kv_engine(20, config());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut committed = 0;
    for trial in 0..120 {
        let n = rng.gen_range(2..=4);
        let programs: Vec<_> = (0..n).map(|_| random_program(&mut rng, 20, 2..=5)).collect();
        let v = check_trial(&base, &programs, trial, Duration::from_micros(200));
        assert!(v.witness.is_some(), "trial {trial}: no serial order among {} reproduces {programs:?}", v.orders_tried);
        committed += v.committed;
    }
    assert!(committed > 120, "too few commits to be meaningful: {committed}");
}

#[test]
fn hot_key_contention_still_serializes() {
    let base = kv_engine(3, config());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let programs: Vec<_> = (0..4)
            .map(|_| vec![Op::Read(1), Op::Add(2, rng.gen_range(1..3)), Op::SetFromReads(1, 1)])
            .collect();
        let v = check_trial(&base, &programs, 1000 + trial, Duration::from_micros(300));
        assert!(v.witness.is_some(), "trial {trial}: {v:?}");
    }
}

#[test]
fn uncommitted_writes_are_never_read() {
    let base = kv_engine(2, config());
    let db = base.fork().unwrap();
    let mut writer = db.begin();
    let up = txmerge_core::Statement::update("kv", vec![txmerge_core::Assignment::add_value("v", 5)])
        .filter(txmerge_core::Predicate::eq("id", txmerge_core::Value::Int(1)));
    writer.execute(&up).unwrap();
    let mut reader = db.begin();
    let sel = txmerge_core::Statement::select_columns("kv", &["v"])
        .filter(txmerge_core::Predicate::eq("id", txmerge_core::Value::Int(1)));
    // The reader blocks on the writer's exclusive lock and times out instead of seeing 15.
    assert!(reader.execute(&sel).unwrap_err().is_retryable());
    writer.abort().unwrap();
    let rs = db.run(|t| t.execute(&sel)).unwrap();
    assert_eq!(rs.rows[0][0], txmerge_core::Value::Int(10));
}
