//! Single-table micro-benchmark over `micro(id, value)`: batches of K
//! same-kind single-row statements, executed one by one or merged.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use txmerge_core::rewrite::{dispatch_results, merge_inserts, Rewriter};
use txmerge_core::{Assignment, ColumnDef, ColumnType, Expr, Operand, Predicate, ResultSet, Schema, Statement, TableSchema, Value};
use txmerge_engine::{Engine, EngineConfig, EngineError, Txn};
use txmerge_service::program::{arg, arg_int};
use txmerge_service::{Args, ProgramError, TransactionProgram};

use crate::exec::Exec;

pub const TABLE: &str = "micro";

pub fn schema() -> Schema {
    let col = |name: &str, pk| ColumnDef { name: name.into(), ty: ColumnType::Int, primary_key: pk };
    Schema { tables: vec![TableSchema { name: TABLE.into(), columns: vec![col("id", true), col("value", false)] }] }
}

/// Ids `1..=rows`, `value = id`.
pub fn load(rows: i64, config: EngineConfig) -> Engine {
    let e = Engine::with_config(schema(), config);
    e.load(TABLE, (1..=rows).map(|i| vec![Value::Int(i), Value::Int(i)])).expect("fresh table");
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MicroKind {
    Select,
    Insert,
    Update,
    Delete,
}

impl MicroKind {
    pub const ALL: [MicroKind; 4] = [MicroKind::Select, MicroKind::Insert, MicroKind::Update, MicroKind::Delete];

    pub fn name(self) -> &'static str {
        match self {
            MicroKind::Select => "select",
            MicroKind::Insert => "insert",
            MicroKind::Update => "update",
            MicroKind::Delete => "delete",
        }
    }

    /// Name of the service program for this kind.
    pub fn program_name(self) -> &'static str {
        match self {
            MicroKind::Select => "micro_select",
            MicroKind::Insert => "micro_insert",
            MicroKind::Update => "micro_update",
            MicroKind::Delete => "micro_delete",
        }
    }
}

fn by_id(id: i64) -> Predicate {
    Predicate::eq("id", Value::Int(id))
}

/// `select value from micro where id = ?` and friends.
pub fn statement(kind: MicroKind, id: i64, value: i64) -> Statement {
    match kind {
        MicroKind::Select => Statement::select_columns(TABLE, &["value"]).filter(by_id(id)),
        MicroKind::Insert => Statement::insert(TABLE, &["id", "value"], vec![vec![Operand::value(id), Operand::value(value)]]),
        MicroKind::Update => Statement::update(TABLE, vec![Assignment::new("value", Expr::value(value))]).filter(by_id(id)),
        MicroKind::Delete => Statement::delete(TABLE).filter(by_id(id)),
    }
}

/// `update micro set value = value + d where id = ?`, the contended form.
pub fn increment(id: i64, d: i64) -> Statement {
    Statement::update(TABLE, vec![Assignment::add_value("value", d)]).filter(by_id(id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MicroMode {
    /// K statements issued one at a time in one transaction.
    Original,
    /// K statements handed over in one call (connector batching analog).
    Batched,
    /// One merged statement.
    Merged,
}

impl MicroMode {
    pub fn name(self) -> &'static str {
        match self {
            MicroMode::Original => "original",
            MicroMode::Batched => "batched",
            MicroMode::Merged => "merged",
        }
    }
}

fn merge_err(e: impl std::fmt::Display) -> EngineError {
    EngineError::Statement(format!("merge failed: {e}"))
}

/// Runs one batch of `stmts` (all of one kind) in `txn`; returns the
/// per-statement results.
pub fn run_batch(txn: &mut Txn, rw: &Rewriter, mode: MicroMode, stmts: &[Statement]) -> Result<Vec<ResultSet>, EngineError> {
    match mode {
        MicroMode::Original => stmts.iter().map(|s| txn.exec(s)).collect(),
        MicroMode::Batched => txn.execute_batch(stmts),
        MicroMode::Merged => merged(txn, rw, stmts),
    }
}

pub fn merged(db: &mut dyn Exec, rw: &Rewriter, stmts: &[Statement]) -> Result<Vec<ResultSet>, EngineError> {
    use txmerge_core::StatementKind as K;
    let n = stmts.len();
    match stmts[0].kind {
        K::Select => {
            let (m, map) = rw.merge_selects(stmts).map_err(merge_err)?;
            let rs = db.exec(&m)?;
            dispatch_results(&rs, &map, n).map_err(merge_err)
        }
        K::Insert => {
            let rs = db.exec(&merge_inserts(stmts).map_err(merge_err)?)?;
            Ok(vec![rs; n])
        }
        K::Update => {
            let rs = db.exec(&rw.merge_updates(stmts).map_err(merge_err)?)?;
            Ok(vec![rs; n])
        }
        K::Delete => {
            let rs = db.exec(&rw.merge_deletes(stmts).map_err(merge_err)?)?;
            Ok(vec![rs; n])
        }
    }
}

/// Hands out row ids so that inserts never collide and deletes never
/// target a row twice.
pub struct IdSource {
    rng: ChaCha8Rng,
    rows: i64,
    next_insert: i64,
    delete_order: Vec<i64>,
}

impl IdSource {
    pub fn new(rows: i64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut delete_order: Vec<i64> = (1..=rows).collect();
        rand::seq::SliceRandom::shuffle(delete_order.as_mut_slice(), &mut rng);
        IdSource { rng, rows, next_insert: rows + 1, delete_order }
    }

    /// `k` distinct ids for a batch of `kind`, or `None` once deletes have
    /// consumed the table.
    pub fn batch(&mut self, kind: MicroKind, k: usize) -> Option<Vec<i64>> {
        match kind {
            MicroKind::Insert => {
                let start = self.next_insert;
                self.next_insert += k as i64;
                Some((start..start + k as i64).collect())
            }
            MicroKind::Delete => {
                if self.delete_order.len() < k {
                    return None;
                }
                let at = self.delete_order.len() - k;
                Some(self.delete_order.split_off(at))
            }
            MicroKind::Select | MicroKind::Update => {
                let k = k.min(self.rows as usize);
                Some(sample(&mut self.rng, self.rows as usize, k).into_iter().map(|i| i as i64 + 1).collect())
            }
        }
    }

    /// Restricts this source to client `c` of `clients`: inserts start at
    /// `insert_base` and only every `clients`-th row is deleted.
    pub fn partition(&mut self, c: usize, clients: usize, insert_base: i64) {
        self.next_insert = insert_base;
        self.delete_order = self.delete_order.iter().copied().filter(|id| (*id as usize) % clients == c).collect();
    }

    pub fn value(&mut self) -> i64 {
        self.rng.gen_range(0..1_000_000)
    }
}

/// One point of a micro sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroPoint {
    pub kind: MicroKind,
    pub mode: MicroMode,
    pub batch: usize,
    /// Original statements completed.
    pub statements: u64,
    pub seconds: f64,
    /// Original statements per second; a merged transaction counts as K.
    pub throughput: f64,
    /// Statements the engine actually executed.
    pub executed: u64,
}

/// Runs `kind` batches of size `k` single-threaded for about `duration`.
/// The engine is shared across calls so that deletes keep consuming rows.
pub fn measure(engine: &Engine, ids: &mut IdSource, kind: MicroKind, mode: MicroMode, k: usize, duration: Duration) -> MicroPoint {
    let rw = Rewriter::new();
    let before = engine.stats().statements_executed;
    let start = Instant::now();
    let mut statements = 0u64;
    while start.elapsed() < duration {
        let Some(batch) = ids.batch(kind, k) else { break };
        let stmts: Vec<Statement> = batch.iter().map(|&id| statement(kind, id, ids.value())).collect();
        let mut txn = engine.begin();
        run_batch(&mut txn, &rw, mode, &stmts).expect("single-threaded micro batch");
        txn.commit().expect("commit");
        statements += k as u64;
    }
    let seconds = start.elapsed().as_secs_f64();
    MicroPoint {
        kind,
        mode,
        batch: k,
        statements,
        seconds,
        throughput: statements as f64 / seconds,
        executed: engine.stats().statements_executed - before,
    }
}

/// Per-statement server cost of the reference engine used for throughput
/// comparisons. The in-process engine has almost no fixed per-statement
/// cost of its own; this stands in for parsing, planning and the client
/// round trip that a networked database charges every statement.
pub const REFERENCE_STATEMENT_COST: Duration = Duration::from_micros(10);

pub fn reference_config() -> EngineConfig {
    EngineConfig { statement_cost: REFERENCE_STATEMENT_COST, ..Default::default() }
}

/// Median original and merged throughput at one batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub batch: usize,
    pub original: f64,
    pub merged: f64,
    /// Median of the per-round merged/original ratios.
    pub ratio: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Original-vs-merged sweep over `ks`. Rounds interleave all batch sizes
/// and both modes so that drift in machine load hits every point alike.
pub fn sweep(kind: MicroKind, rows: i64, ks: &[usize], rounds: usize, per_point: Duration, config: EngineConfig, seed: u64) -> Vec<RatioPoint> {
    let engine = load(rows, config);
    let mut ids = IdSource::new(rows, seed);
    let mut samples: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![Default::default(); ks.len()];
    for _ in 0..rounds {
        for (i, &k) in ks.iter().enumerate() {
            let o = measure(&engine, &mut ids, kind, MicroMode::Original, k, per_point);
            let m = measure(&engine, &mut ids, kind, MicroMode::Merged, k, per_point);
            samples[i].0.push(o.throughput);
            samples[i].1.push(m.throughput);
            samples[i].2.push(m.throughput / o.throughput);
        }
    }
    ks.iter()
        .zip(samples)
        .map(|(&batch, (o, m, r))| RatioPoint { batch, original: median(o), merged: median(m), ratio: median(r) })
        .collect()
}

/// Result of the contended-counter workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContendedPoint {
    pub mode: MicroMode,
    pub clients: usize,
    pub batch: usize,
    /// Increments committed.
    pub invocations: u64,
    pub seconds: f64,
    pub throughput: f64,
    pub retries: u64,
    pub executed: u64,
}

/// `clients` threads increment row `hot` for about `duration`. In original
/// mode every increment is its own transaction; in merged mode each
/// transaction carries `k` increments collapsed by the rewriter into one
/// aggregated update.
pub fn measure_contended(engine: &Engine, hot: i64, clients: usize, k: usize, mode: MicroMode, duration: Duration) -> ContendedPoint {
    let per_txn = if mode == MicroMode::Original { 1 } else { k };
    let before = engine.stats().statements_executed;
    let start = Instant::now();
    let (invocations, retries) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..clients)
            .map(|_| {
                s.spawn(move || {
                    let rw = Rewriter::new();
                    let (mut done, mut retries) = (0u64, 0u64);
                    while start.elapsed() < duration {
                        let stmts: Vec<Statement> = (0..per_txn).map(|_| increment(hot, 1)).collect();
                        let mut txn = engine.begin();
                        let r = match mode {
                            MicroMode::Original => txn.exec(&stmts[0]).map(|_| ()),
                            _ => rw.merge_updates(&stmts).map_err(merge_err).and_then(|m| txn.exec(&m)).map(|_| ()),
                        };
                        match r.and_then(|_| txn.commit()) {
                            Ok(()) => done += per_txn as u64,
                            Err(e) if e.is_retryable() => retries += 1,
                            Err(e) => panic!("contended increment failed: {e}"),
                        }
                    }
                    (done, retries)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("client thread")).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    });
    let seconds = start.elapsed().as_secs_f64();
    ContendedPoint {
        mode,
        clients,
        batch: per_txn,
        invocations,
        seconds,
        throughput: invocations as f64 / seconds,
        retries,
        executed: engine.stats().statements_executed - before,
    }
}

/// Service program for one micro statement per invocation
/// (`{"id", "value"}`); the merged form is the merged statement.
pub struct MicroProgram {
    kind: MicroKind,
    name: String,
    rewriter: Rewriter,
}

impl MicroProgram {
    pub fn new(kind: MicroKind) -> Self {
        MicroProgram { kind, name: kind.program_name().to_string(), rewriter: Rewriter::new() }
    }
}

fn result_json(kind: MicroKind, rs: &ResultSet) -> Json {
    match kind {
        MicroKind::Select => rs.rows.first().map_or(Json::Null, |r| r[0].to_plain_json()),
        _ => Json::Null,
    }
}

impl TransactionProgram for MicroProgram {
    fn name(&self) -> &str {
        &self.name
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        Ok(vec![arg(args, "id")?])
    }

    /// Any statements of one kind merge, whatever rows they touch.
    fn merge_key(&self, _args: &Args) -> Result<Vec<Value>, ProgramError> {
        Ok(vec![Value::Str(TABLE.into())])
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        let rs = txn.exec(&self.statement(args)?)?;
        Ok(result_json(self.kind, &rs))
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        let stmts: Vec<Statement> = batch.iter().map(|a| self.statement(a)).collect::<Result<_, _>>()?;
        let mut ids: Vec<i64> = batch.iter().map(|a| arg_int(a, "id")).collect::<Result<_, _>>()?;
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < batch.len() && self.kind != MicroKind::Select {
            // Repeated keys: plain-value updates and inserts do not commute.
            return stmts.iter().map(|s| Ok(result_json(self.kind, &txn.exec(s)?))).collect();
        }
        let results = merged(txn, &self.rewriter, &stmts)?;
        Ok(results.iter().map(|rs| result_json(self.kind, rs)).collect())
    }
}

impl MicroProgram {
    fn statement(&self, args: &Args) -> Result<Statement, ProgramError> {
        let value = match self.kind {
            MicroKind::Insert | MicroKind::Update => arg_int(args, "value")?,
            _ => 0,
        };
        Ok(statement(self.kind, arg_int(args, "id")?, value))
    }
}

/// Contended counter: `value += delta` on one row (`{"id", "delta"}`).
/// The merged form collapses every member into one aggregated update.
pub struct Increment {
    rewriter: Rewriter,
}

impl Increment {
    pub fn new() -> Self {
        Increment { rewriter: Rewriter::new() }
    }
}

impl Default for Increment {
    fn default() -> Self {
        Self::new()
    }
}

impl TransactionProgram for Increment {
    fn name(&self) -> &str {
        "micro_increment"
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        Ok(vec![arg(args, "id")?])
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        txn.exec(&increment(arg_int(args, "id")?, arg_int(args, "delta")?))?;
        Ok(Json::Null)
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        let stmts: Vec<Statement> =
            batch.iter().map(|a| Ok(increment(arg_int(a, "id")?, arg_int(a, "delta")?))).collect::<Result<_, ProgramError>>()?;
        let merged = self.rewriter.merge_updates(&stmts).map_err(|e| ProgramError::Merge(e.to_string()))?;
        txn.exec(&merged)?;
        Ok(vec![Json::Null; batch.len()])
    }
}

/// `{"id": id, "value": value}`.
pub fn micro_args(id: i64, value: i64) -> Args {
    match json!({ "id": id, "value": value }) {
        Json::Object(m) => m,
        _ => unreachable!(),
    }
}

/// `{"id": id, "delta": delta}`.
pub fn increment_args(id: i64, delta: i64) -> Args {
    match json!({ "id": id, "delta": delta }) {
        Json::Object(m) => m,
        _ => unreachable!(),
    }
}
