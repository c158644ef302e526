//! Randomized serializability checking. Small transaction programs run
//! concurrently against a fork of a base database; the committed ones must
//! then match some serial order exactly, both in what each program observed
//! and in the final state.

use std::ops::RangeInclusive;
use std::sync::Barrier;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txmerge_core::{Assignment, ColumnDef, ColumnType, Expr, Operand, Predicate, Schema, Statement, TableSchema, Value};

use crate::{Engine, EngineConfig, EngineError, Txn};

pub const TABLE: &str = "kv";

pub fn kv_schema() -> Schema {
    let col = |name: &str, pk: bool| ColumnDef { name: name.into(), ty: ColumnType::Int, primary_key: pk };
    Schema { tables: vec![TableSchema { name: TABLE.into(), columns: vec![col("id", true), col("v", false)] }] }
}

/// `kv` with ids `1..=rows` and `v = 10 * id`.
pub fn kv_engine(rows: i64, config: EngineConfig) -> Engine {
    let e = Engine::with_config(kv_schema(), config);
    e.load(TABLE, (1..=rows).map(|i| vec![Value::Int(i), Value::Int(10 * i)])).expect("fresh table");
    e
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Read(i64),
    ReadForUpdate(i64),
    Add(i64, i64),
    /// `v = (sum of values read so far) + c`, a write that depends on reads.
    SetFromReads(i64, i64),
    Insert(i64, i64),
    Delete(i64),
}

pub type Program = Vec<Op>;

/// Keys are drawn from `1..=keys + 2`, so a few target absent rows.
pub fn random_program(rng: &mut impl Rng, keys: i64, len: RangeInclusive<usize>) -> Program {
    let n = rng.gen_range(len);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=keys + 2);
            match rng.gen_range(0..10) {
                0..=2 => Op::Read(k),
                3 => Op::ReadForUpdate(k),
                4..=5 => Op::Add(k, rng.gen_range(-3..=3)),
                6..=7 => Op::SetFromReads(k, rng.gen_range(0..5)),
                8 => Op::Insert(k, rng.gen_range(0..100)),
                _ => Op::Delete(k),
            }
        })
        .collect()
}

fn by_id(k: i64) -> Predicate {
    Predicate::eq("id", Value::Int(k))
}

/// Runs `prog` inside `txn`, calling `pause` between operations. Returns the
/// observations: read values (NULL for absent rows) and affected counts.
pub fn execute_program(txn: &mut Txn, prog: &Program, mut pause: impl FnMut()) -> Result<Vec<Value>, EngineError> {
    let mut seen = Vec::new();
    let mut read_sum = 0i64;
    for op in prog {
        pause();
        let obs = match op {
            Op::Read(k) | Op::ReadForUpdate(k) => {
                let mut s = Statement::select_columns(TABLE, &["v"]).filter(by_id(*k));
                if matches!(op, Op::ReadForUpdate(_)) {
                    s = s.for_update();
                }
                let rs = txn.execute(&s)?;
                let v = rs.rows.first().map_or(Value::Null, |r| r[0].clone());
                read_sum += v.as_int().unwrap_or(0);
                v
            }
            Op::Add(k, d) => {
                let s = Statement::update(TABLE, vec![Assignment::add_value("v", *d)]).filter(by_id(*k));
                Value::Int(txn.execute(&s)?.affected as i64)
            }
            Op::SetFromReads(k, c) => {
                let s = Statement::update(TABLE, vec![Assignment::new("v", Expr::value(read_sum + c))]).filter(by_id(*k));
                Value::Int(txn.execute(&s)?.affected as i64)
            }
            Op::Insert(k, v) => {
                let s = Statement::insert(TABLE, &["id", "v"], vec![vec![Operand::value(*k), Operand::value(*v)]]);
                match txn.execute(&s) {
                    Ok(rs) => Value::Int(rs.affected as i64),
                    Err(EngineError::ConstraintViolation(_)) => Value::Int(-1),
                    Err(e) => return Err(e),
                }
            }
            Op::Delete(k) => Value::Int(txn.execute(&Statement::delete(TABLE).filter(by_id(*k)))?.affected as i64),
        };
        seen.push(obs);
    }
    Ok(seen)
}

/// What a concurrent run produced: per-program observations (`None` when the
/// program aborted) and the final digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcurrentRun {
    pub observations: Vec<Option<Vec<Value>>>,
    pub digest: String,
}

/// Runs every program on its own thread against a fork of `base`, with
/// seeded random pauses of up to `max_pause` between operations.
pub fn run_concurrent(base: &Engine, programs: &[Program], seed: u64, max_pause: Duration) -> ConcurrentRun {
    let db = base.fork().expect("quiescent base");
    let barrier = Barrier::new(programs.len());
    let observations = std::thread::scope(|s| {
        let handles: Vec<_> = programs
            .iter()
            .enumerate()
            .map(|(i, prog)| {
                let (db, barrier) = (&db, &barrier);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let max = max_pause.as_micros() as u64;
                    barrier.wait();
                    let mut txn = db.begin();
                    let pause = || std::thread::sleep(Duration::from_micros(rng.gen_range(0..=max)));
                    match execute_program(&mut txn, prog, pause) {
                        Ok(seen) => txn.commit().ok().map(|_| seen),
                        Err(_) => None,
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("program thread")).collect()
    });
    ConcurrentRun { observations, digest: db.digest().expect("all programs finished") }
}

/// Executes the programs named by `order` one after another on a fork of
/// `base`, each in its own transaction.
pub fn run_serial(base: &Engine, programs: &[Program], order: &[usize]) -> (Vec<Vec<Value>>, String) {
    let db = base.fork().expect("quiescent base");
    let seen = order
        .iter()
        .map(|&i| db.run(|t| execute_program(t, &programs[i], || ())).expect("serial execution cannot time out"))
        .collect();
    (seen, db.digest().expect("quiescent"))
}

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub committed: usize,
    pub orders_tried: usize,
    /// First serial order of the committed programs reproducing the run.
    pub witness: Option<Vec<usize>>,
}

/// One trial: concurrent run, then exhaustive search over serial orders.
pub fn check_trial(base: &Engine, programs: &[Program], seed: u64, max_pause: Duration) -> Verdict {
    let run = run_concurrent(base, programs, seed, max_pause);
    let committed: Vec<usize> = (0..programs.len()).filter(|&i| run.observations[i].is_some()).collect();
    let orders = permutations(&committed);
    let orders_tried = orders.len();
    let witness = orders.into_iter().find(|order| {
        let (seen, digest) = run_serial(base, programs, order);
        digest == run.digest
            && order.iter().zip(&seen).all(|(&i, s)| run.observations[i].as_ref() == Some(s))
    });
    Verdict { committed: committed.len(), orders_tried, witness }
}
