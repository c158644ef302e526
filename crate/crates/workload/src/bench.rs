//! Benchmark driver: runs a workload in one of three modes and reports
//! throughput, latency percentiles and backend counters.
//!
//! - `original`: every invocation is its own backend transaction.
//! - `intra-merged`: statements inside one invocation are merged (for the
//!   micro workloads, one invocation is a batch of K statements).
//! - `service-merged`: invocations from different clients are batched by
//!   the merger service and run as one merged transaction.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use txmerge_engine::{Engine, EngineConfig, Txn};
use txmerge_service::{percentile, Args, BatchConfig, ProgramError, Service, Status, TransactionProgram};

use crate::gen::{OrderGen, TpccGen};
use crate::micro::{self, IdSource, MicroKind, MicroMode, MicroProgram};
use crate::neworder::NewOrder;
use crate::oracle::{oracle_check, OracleSpec, OracleVerdict};
use crate::order_total::{self, OrderTotal};
use crate::payment::Payment;
use crate::tpcc::{self, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Workload {
    MicroSelect,
    MicroInsert,
    MicroUpdate,
    MicroDelete,
    Neworder,
    Payment,
    Mixed,
    OrderTotal,
}

impl Workload {
    pub const ALL: [Workload; 8] = [
        Workload::MicroSelect,
        Workload::MicroInsert,
        Workload::MicroUpdate,
        Workload::MicroDelete,
        Workload::Neworder,
        Workload::Payment,
        Workload::Mixed,
        Workload::OrderTotal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Workload::MicroSelect => "micro-select",
            Workload::MicroInsert => "micro-insert",
            Workload::MicroUpdate => "micro-update",
            Workload::MicroDelete => "micro-delete",
            Workload::Neworder => "neworder",
            Workload::Payment => "payment",
            Workload::Mixed => "mixed",
            Workload::OrderTotal => "order-total",
        }
    }

    pub fn micro_kind(self) -> Option<MicroKind> {
        match self {
            Workload::MicroSelect => Some(MicroKind::Select),
            Workload::MicroInsert => Some(MicroKind::Insert),
            Workload::MicroUpdate => Some(MicroKind::Update),
            Workload::MicroDelete => Some(MicroKind::Delete),
            _ => None,
        }
    }

    fn is_tpcc(self) -> bool {
        matches!(self, Workload::Neworder | Workload::Payment | Workload::Mixed)
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Workload::ALL.into_iter().find(|w| w.name() == s).ok_or_else(|| format!("unknown workload {s}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Original,
    IntraMerged,
    ServiceMerged,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Original, Mode::IntraMerged, Mode::ServiceMerged];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Original => "original",
            Mode::IntraMerged => "intra-merged",
            Mode::ServiceMerged => "service-merged",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown mode {s}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub workload: Workload,
    pub mode: Mode,
    pub scale: Scale,
    pub micro_rows: i64,
    pub orders: i64,
    pub clients: usize,
    /// One run per batch size.
    pub batches: Vec<usize>,
    pub duration: Duration,
    /// Batching window of the service in service-merged mode.
    pub timeout_ms: u64,
    pub workers: usize,
    pub statement_cost: Duration,
    pub seed: u64,
    /// Run the serial oracle alongside service-merged TPC-C runs.
    pub verify: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            workload: Workload::Mixed,
            mode: Mode::ServiceMerged,
            scale: Scale::default(),
            micro_rows: 10_000,
            orders: 100,
            clients: 8,
            batches: vec![8],
            duration: Duration::from_secs(2),
            timeout_ms: 2,
            workers: 2,
            statement_cost: micro::REFERENCE_STATEMENT_COST,
            seed: 1,
            verify: false,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.scale.validate()?;
        if self.micro_rows < 1 || self.orders < 1 {
            return Err("table sizes must be at least 1".into());
        }
        if self.clients == 0 || self.workers == 0 || self.timeout_ms == 0 {
            return Err("clients, workers and timeout must be positive".into());
        }
        if self.batches.is_empty() || self.batches.contains(&0) {
            return Err("batch sizes must be at least 1".into());
        }
        if self.duration.is_zero() {
            return Err("duration must be positive".into());
        }
        Ok(())
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig { statement_cost: self.statement_cost, ..Default::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub workload: Workload,
    pub mode: Mode,
    pub batch: usize,
    pub clients: usize,
    /// Invocations per second; a merged transaction counts every member
    /// (for micro workloads an invocation is one statement).
    pub throughput: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub retries: u64,
    pub errors: u64,
    pub stmts_executed: u64,
    pub invocations: u64,
    /// Backend transactions committed.
    pub transactions: u64,
    pub seconds: f64,
    pub oracle: Option<OracleVerdict>,
}

impl RunReport {
    pub const CSV_HEADER: &'static str = "workload,mode,batch,clients,throughput,p50_ms,p95_ms,p99_ms,retries,stmts_executed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.1},{:.3},{:.3},{:.3},{},{}",
            self.workload, self.mode, self.batch, self.clients, self.throughput, self.p50_ms, self.p95_ms, self.p99_ms, self.retries, self.stmts_executed
        )
    }

    /// Transactions per second times invocations merged per transaction.
    pub fn merged_accounting(&self) -> f64 {
        if self.transactions == 0 || self.seconds == 0.0 {
            return 0.0;
        }
        (self.transactions as f64 / self.seconds) * (self.invocations as f64 / self.transactions as f64)
    }
}

pub fn to_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(RunReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Runs the workload once per batch size.
pub fn run(spec: &WorkloadSpec) -> Result<Vec<RunReport>, String> {
    spec.validate()?;
    spec.batches.iter().map(|&b| run_one(spec, b)).collect()
}

fn run_one(spec: &WorkloadSpec, batch: usize) -> Result<RunReport, String> {
    let mut report = match (spec.workload.micro_kind(), spec.mode) {
        (Some(kind), Mode::Original) => micro_direct(spec, kind, MicroMode::Original, batch),
        (Some(kind), Mode::IntraMerged) => micro_direct(spec, kind, MicroMode::Merged, batch),
        _ => through_service(spec, batch)?,
    };
    if spec.verify && spec.mode == Mode::ServiceMerged && spec.workload.is_tpcc() {
        let oracle = OracleSpec {
            trials: 100,
            max_batch: batch.max(1),
            scale: spec.scale,
            workers: spec.workers,
            seed: spec.seed,
            ..Default::default()
        };
        report.oracle = Some(oracle_check(&oracle)?);
    }
    Ok(report)
}

fn latencies(mut ms: Vec<f64>) -> (f64, f64, f64) {
    ms.sort_by(f64::total_cmp);
    (percentile(&ms, 0.50), percentile(&ms, 0.95), percentile(&ms, 0.99))
}

/// Micro workloads without the service: one client issuing K-statement
/// transactions, statement by statement or merged.
fn micro_direct(spec: &WorkloadSpec, kind: MicroKind, mode: MicroMode, k: usize) -> RunReport {
    let engine = micro::load(spec.micro_rows, spec.engine_config());
    let mut ids = IdSource::new(spec.micro_rows, spec.seed);
    let rw = txmerge_core::rewrite::Rewriter::new();
    let before = engine.stats();
    let start = Instant::now();
    let mut lat = Vec::new();
    let mut invocations = 0u64;
    while start.elapsed() < spec.duration {
        let Some(batch) = ids.batch(kind, k) else { break };
        let stmts: Vec<_> = batch.iter().map(|&id| micro::statement(kind, id, ids.value())).collect();
        let t = Instant::now();
        let mut txn = engine.begin();
        micro::run_batch(&mut txn, &rw, mode, &stmts).expect("single-client micro batch");
        txn.commit().expect("commit");
        lat.push(t.elapsed().as_secs_f64() * 1e3);
        invocations += k as u64;
    }
    let seconds = start.elapsed().as_secs_f64();
    let after = engine.stats();
    let (p50_ms, p95_ms, p99_ms) = latencies(lat);
    RunReport {
        workload: spec.workload,
        mode: spec.mode,
        batch: k,
        clients: 1,
        throughput: invocations as f64 / seconds,
        p50_ms,
        p95_ms,
        p99_ms,
        retries: 0,
        errors: 0,
        stmts_executed: after.statements_executed - before.statements_executed,
        invocations,
        transactions: after.commits - before.commits,
        seconds,
        oracle: None,
    }
}

/// Runs a program's merged form for a single invocation, so that only the
/// statements inside one transaction are merged.
struct IntraMerged(Arc<dyn TransactionProgram>);

impl TransactionProgram for IntraMerged {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<txmerge_core::Value>, ProgramError> {
        self.0.partition_key(args)
    }

    fn merge_key(&self, args: &Args) -> Result<Vec<txmerge_core::Value>, ProgramError> {
        self.0.merge_key(args)
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        let mut out = self.0.execute_merged(txn, &[args])?;
        out.pop().ok_or_else(|| ProgramError::Merge("merged form returned no output".into()))
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        self.0.execute_merged(txn, batch)
    }
}

/// Per-client argument source.
enum Source {
    Tpcc { gen: TpccGen, workload: Workload },
    Orders(OrderGen),
    Micro { kind: MicroKind, ids: IdSource },
}

impl Source {
    fn next(&mut self) -> Option<(&'static str, Args)> {
        match self {
            Source::Tpcc { gen, workload } => {
                let neworder = match workload {
                    Workload::Neworder => true,
                    Workload::Payment => false,
                    _ => gen.rng().gen_bool(0.5),
                };
                Some(if neworder { ("neworder", gen.neworder().to_args()) } else { ("payment", gen.payment().to_args()) })
            }
            Source::Orders(g) => Some(("order_total", g.add_item().to_args())),
            Source::Micro { kind, ids } => {
                let id = ids.batch(*kind, 1)?[0];
                Some((kind.program_name(), micro::micro_args(id, ids.value())))
            }
        }
    }
}

/// Programs the service needs for `workload`.
pub fn programs(workload: Workload) -> Vec<Arc<dyn TransactionProgram>> {
    match workload {
        Workload::Neworder | Workload::Payment | Workload::Mixed => vec![Arc::new(NewOrder::new()), Arc::new(Payment::new())],
        Workload::OrderTotal => vec![Arc::new(OrderTotal::new())],
        w => vec![Arc::new(MicroProgram::new(w.micro_kind().expect("micro workload")))],
    }
}

/// Freshly loaded backend for the workload.
pub fn fixture(spec: &WorkloadSpec) -> Result<Engine, String> {
    let config = spec.engine_config();
    match spec.workload {
        w if w.is_tpcc() => tpcc::load(spec.scale, spec.seed, config).map_err(|e| e.to_string()),
        Workload::OrderTotal => order_total::load(spec.orders, config).map_err(|e| e.to_string()),
        _ => Ok(micro::load(spec.micro_rows, config)),
    }
}

/// Splits the id space among clients so that inserts and deletes of
/// different clients never collide.
fn sources(spec: &WorkloadSpec) -> Vec<Source> {
    (0..spec.clients)
        .map(|c| {
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(c as u64);
            let base = (c as i64 + 1) * 1_000_000_000;
            match spec.workload {
                w if w.is_tpcc() => Source::Tpcc { gen: TpccGen::new(spec.scale, seed, base), workload: w },
                Workload::OrderTotal => Source::Orders(OrderGen::new(spec.orders, seed, base)),
                w => {
                    let kind = w.micro_kind().expect("micro workload");
                    let mut ids = IdSource::new(spec.micro_rows, seed);
                    ids.partition(c, spec.clients, base);
                    Source::Micro { kind, ids }
                }
            }
        })
        .collect()
}

fn through_service(spec: &WorkloadSpec, batch: usize) -> Result<RunReport, String> {
    let engine = fixture(spec)?;
    let mut programs = programs(spec.workload);
    let mut config = BatchConfig::new(spec.workers, batch, spec.timeout_ms);
    match spec.mode {
        Mode::ServiceMerged => {}
        Mode::Original => {
            for p in &programs {
                config.merge.insert(p.name().to_string(), false);
            }
        }
        Mode::IntraMerged => {
            programs = programs.into_iter().map(|p| Arc::new(IntraMerged(p)) as Arc<dyn TransactionProgram>).collect();
            for p in &programs {
                config.merge.insert(p.name().to_string(), false);
            }
        }
    }
    let service = Service::new(engine, programs, config).map_err(|e| e.to_string())?;
    let before = service.engine().stats();
    let start = Instant::now();
    let deadline = start + spec.duration;
    let results: Vec<(Vec<f64>, u64, u64, u64)> = std::thread::scope(|s| {
        let service = &service;
        let handles: Vec<_> = sources(spec)
            .into_iter()
            .map(|mut src| {
                s.spawn(move || {
                    let (mut lat, mut done, mut retries, mut errors) = (Vec::new(), 0u64, 0u64, 0u64);
                    'calls: while Instant::now() < deadline {
                        let Some((txn, args)) = src.next() else { break };
                        let t = Instant::now();
                        loop {
                            match service.call(txn, args.clone()) {
                                Status::Ok(_) => break,
                                Status::Retry(_) => {
                                    retries += 1;
                                    if Instant::now() >= deadline {
                                        break 'calls;
                                    }
                                }
                                Status::Error(_) => {
                                    errors += 1;
                                    continue 'calls;
                                }
                            }
                        }
                        lat.push(t.elapsed().as_secs_f64() * 1e3);
                        done += 1;
                    }
                    (lat, done, retries, errors)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("client thread")).collect()
    });
    let seconds = start.elapsed().as_secs_f64();
    service.shutdown();
    let after = service.engine().stats();
    let mut lat = Vec::new();
    let (mut invocations, mut retries, mut errors) = (0, 0, 0);
    for (l, d, r, e) in results {
        lat.extend(l);
        invocations += d;
        retries += r;
        errors += e;
    }
    let (p50_ms, p95_ms, p99_ms) = latencies(lat);
    Ok(RunReport {
        workload: spec.workload,
        mode: spec.mode,
        batch,
        clients: spec.clients,
        throughput: invocations as f64 / seconds,
        p50_ms,
        p95_ms,
        p99_ms,
        retries,
        errors,
        stmts_executed: after.statements_executed - before.statements_executed,
        invocations,
        transactions: after.commits - before.commits,
        seconds,
        oracle: None,
    })
}

/// Drives `spec.clients` closed-loop clients against `service` until `stop`
/// is set; returns the number of invocations answered Ok. Retries are
/// resubmitted.
pub fn drive(service: &Service, spec: &WorkloadSpec, stop: &AtomicBool) -> u64 {
    std::thread::scope(|s| {
        let handles: Vec<_> = sources(spec)
            .into_iter()
            .map(|mut src| {
                s.spawn(move || {
                    let mut ok = 0u64;
                    while !stop.load(Ordering::Relaxed) {
                        let Some((txn, args)) = src.next() else { break };
                        while !stop.load(Ordering::Relaxed) {
                            match service.call(txn, args.clone()) {
                                Status::Ok(_) => {
                                    ok += 1;
                                    break;
                                }
                                Status::Retry(_) => continue,
                                Status::Error(_) => break,
                            }
                        }
                    }
                    ok
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("load client")).sum()
    })
}
