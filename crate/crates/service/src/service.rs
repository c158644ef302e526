use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use txmerge_core::partition::{PartitionPolicy, Partitioner};
use txmerge_core::PolicyError;
use txmerge_engine::Engine;

use crate::config::{BatchConfig, ValidationError};
use crate::program::{Args, ProgramError, TransactionProgram};
use crate::stats::{Recorder, ServiceStats};

/// Buckets of the default worker-level policy.
pub const WORKER_BUCKETS: usize = 4096;
pub const DEFAULT_QUEUE_CAPACITY: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "data", rename_all = "lowercase")]
pub enum Status {
    Ok(Json),
    /// Aborted for a retryable reason; the client may resubmit.
    Retry(String),
    Error(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown transaction {0}")]
    UnknownTransaction(String),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("queue full")]
    QueueFull,
    #[error("service stopped")]
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyLevel {
    /// Key → worker.
    Merger,
    /// Merge key → bucket inside a worker.
    Worker,
}

struct Job {
    program: Arc<dyn TransactionProgram>,
    args: Args,
    bucket: usize,
    arrived: Instant,
    reply: Sender<Status>,
}

struct WorkerHandle {
    tx: Sender<Job>,
}

struct Shared {
    engine: Engine,
    programs: BTreeMap<String, Arc<dyn TransactionProgram>>,
    config: ArcSwap<BatchConfig>,
    merger: Partitioner,
    worker_level: Partitioner,
    recorder: Recorder,
    invalid_targets: AtomicU64,
    stopping: AtomicBool,
}

/// A merger: accepts invocations, queues them on per-worker queues, and
/// executes size- or timeout-triggered batches against the backend.
pub struct Service {
    shared: Arc<Shared>,
    workers: ArcSwap<Vec<WorkerHandle>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    reconfigure: Mutex<()>,
    queue_capacity: usize,
    started: Instant,
}

impl Service {
    pub fn new(
        engine: Engine,
        programs: Vec<Arc<dyn TransactionProgram>>,
        config: BatchConfig,
    ) -> Result<Service, ValidationError> {
        Self::with_capacity(engine, programs, config, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(
        engine: Engine,
        programs: Vec<Arc<dyn TransactionProgram>>,
        config: BatchConfig,
        queue_capacity: usize,
    ) -> Result<Service, ValidationError> {
        config.validate()?;
        let mut by_name = BTreeMap::new();
        for p in programs {
            let name = p.name().to_string();
            if by_name.insert(name.clone(), p).is_some() {
                return Err(ValidationError(format!("transaction {name} registered twice")));
            }
        }
        let programs = by_name;
        let shared = Arc::new(Shared {
            engine,
            programs,
            merger: Partitioner::new(PartitionPolicy::hashed(1, config.workers)).expect("hashed policy is valid"),
            worker_level: Partitioner::new(PartitionPolicy::hashed(1, WORKER_BUCKETS)).expect("hashed policy is valid"),
            config: ArcSwap::from_pointee(config.clone()),
            recorder: Recorder::new(),
            invalid_targets: AtomicU64::new(0),
            stopping: AtomicBool::new(false),
        });
        let svc = Service {
            shared,
            workers: ArcSwap::from_pointee(Vec::new()),
            threads: Mutex::new(Vec::new()),
            reconfigure: Mutex::new(()),
            queue_capacity,
            started: Instant::now(),
        };
        svc.resize(config.workers);
        Ok(svc)
    }

    pub fn engine(&self) -> &Engine {
        &self.shared.engine
    }

    pub fn config(&self) -> BatchConfig {
        self.shared.config.load().as_ref().clone()
    }

    pub fn workers(&self) -> usize {
        self.workers.load().len()
    }

    pub fn uptime(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &str> {
        self.shared.programs.keys().map(String::as_str)
    }

    /// Replaces the batching configuration. A change of worker count spawns
    /// or retires workers and installs an evenly hashed merger policy for
    /// the new count; retired workers finish their queued jobs first.
    pub fn set_config(&self, config: BatchConfig) -> Result<(), ValidationError> {
        config.validate()?;
        let _g = self.reconfigure.lock();
        let old = self.workers();
        self.shared.config.store(Arc::new(config.clone()));
        if config.workers != old {
            let next = self.shared.merger.version() + 1;
            self.resize(config.workers);
            // Racing explicit updates may have moved past `next`; theirs wins.
            let _ = self.shared.merger.update_policy(PartitionPolicy::hashed(next, config.workers));
        }
        Ok(())
    }

    pub fn set_policy(&self, level: PolicyLevel, policy: PartitionPolicy) -> Result<(), PolicyError> {
        match level {
            PolicyLevel::Merger => self.shared.merger.update_policy(policy),
            PolicyLevel::Worker => self.shared.worker_level.update_policy(policy),
        }
    }

    pub fn policy(&self, level: PolicyLevel) -> Arc<PartitionPolicy> {
        match level {
            PolicyLevel::Merger => self.shared.merger.policy(),
            PolicyLevel::Worker => self.shared.worker_level.policy(),
        }
    }

    fn resize(&self, n: usize) {
        let current = self.workers.load();
        let mut next: Vec<WorkerHandle> = current.iter().take(n).map(|w| WorkerHandle { tx: w.tx.clone() }).collect();
        let mut threads = self.threads.lock();
        for id in current.len()..n {
            let (tx, rx) = bounded(self.queue_capacity);
            let shared = self.shared.clone();
            let handle = std::thread::Builder::new()
                .name(format!("txmerge-worker-{id}"))
                .spawn(move || worker_loop(shared, rx))
                .expect("spawn worker");
            threads.push(handle);
            next.push(WorkerHandle { tx });
        }
        // Dropping the old vector drops the senders of retired workers.
        self.workers.store(Arc::new(next));
        threads.retain(|h| !h.is_finished());
    }

    /// Queues an invocation; the receiver yields exactly one status.
    pub fn submit(&self, txn: &str, args: Args) -> Result<Receiver<Status>, SubmitError> {
        if self.shared.stopping.load(Ordering::Acquire) {
            return Err(SubmitError::Stopped);
        }
        let program = self.shared.programs.get(txn).ok_or_else(|| SubmitError::UnknownTransaction(txn.to_string()))?;
        let key = program.partition_key(&args).map_err(|e| SubmitError::InvalidArgs(e.to_string()))?;
        let merge_key = program.merge_key(&args).map_err(|e| SubmitError::InvalidArgs(e.to_string()))?;
        let bucket = self.shared.worker_level.route(&merge_key);
        let (reply, rx) = bounded(1);
        let mut job = Job { program: program.clone(), args, bucket, arrived: Instant::now(), reply };
        // A concurrent shrink can retire the chosen worker; reroute once.
        for _ in 0..2 {
            let workers = self.workers.load();
            let target = self.shared.merger.route(&key);
            let target = if target < workers.len() {
                target
            } else {
                self.shared.invalid_targets.fetch_add(1, Ordering::Relaxed);
                0
            };
            match workers[target].tx.try_send(job) {
                Ok(()) => return Ok(rx),
                Err(TrySendError::Full(_)) => return Err(SubmitError::QueueFull),
                Err(TrySendError::Disconnected(j)) => job = j,
            }
        }
        Err(SubmitError::QueueFull)
    }

    /// Submits and waits. Refusals map to `Retry` (queue full, stopped) or
    /// `Error` (unknown transaction, bad arguments).
    pub fn call(&self, txn: &str, args: Args) -> Status {
        match self.submit(txn, args) {
            Ok(rx) => rx.recv().unwrap_or_else(|_| Status::Retry("worker stopped".into())),
            Err(e @ (SubmitError::QueueFull | SubmitError::Stopped)) => Status::Retry(e.to_string()),
            Err(e) => Status::Error(e.to_string()),
        }
    }

    pub fn stats(&self, reset: bool) -> ServiceStats {
        let mut s = self.shared.recorder.snapshot(reset);
        s.fallback_routed += self.shared.merger.fallback_hits() + self.shared.invalid_targets.load(Ordering::Relaxed);
        s.statements_executed = self.shared.engine.stats().statements_executed;
        s
    }

    /// Stops accepting work, lets workers drain their queues, and joins them.
    pub fn shutdown(&self) {
        self.shared.stopping.store(true, Ordering::Release);
        self.workers.store(Arc::new(Vec::new()));
        let threads: Vec<_> = std::mem::take(&mut *self.threads.lock());
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker_loop(shared: Arc<Shared>, rx: Receiver<Job>) {
    let mut pending: VecDeque<Job> = VecDeque::new();
    let mut open = true;
    loop {
        while let Ok(j) = rx.try_recv() {
            pending.push_back(j);
        }
        if pending.is_empty() {
            if !open {
                return;
            }
            match rx.recv() {
                Ok(j) => pending.push_back(j),
                Err(_) => return,
            }
            continue;
        }
        let config = shared.config.load();
        if let Some(batch) = take_batch(&mut pending, &config, !open) {
            run_batch(&shared, batch, &config);
            continue;
        }
        let deadline = pending.front().expect("non-empty").arrived + config.timeout();
        match rx.recv_deadline(deadline) {
            Ok(j) => pending.push_back(j),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => open = false,
        }
    }
}

/// Picks the next batch: the oldest group already holding a full batch, or,
/// once the oldest job's timeout has expired (or the queue is draining), up
/// to a full batch from that job's group. Members keep arrival order.
fn take_batch(pending: &mut VecDeque<Job>, config: &BatchConfig, drain: bool) -> Option<Vec<Job>> {
    let group = |j: &Job| (j.program.name().to_string(), j.bucket);
    let mut counts: BTreeMap<(String, usize), usize> = BTreeMap::new();
    let mut full = None;
    for j in pending.iter() {
        let g = group(j);
        let c = counts.entry(g.clone()).or_default();
        *c += 1;
        if *c >= config.limit(&g.0) {
            full = Some(g);
            break;
        }
    }
    let chosen = match full {
        Some(g) => g,
        None => {
            let front = pending.front()?;
            if !drain && front.arrived.elapsed() < config.timeout() {
                return None;
            }
            group(front)
        }
    };
    let limit = config.limit(&chosen.0);
    let mut batch = Vec::new();
    let mut rest = VecDeque::with_capacity(pending.len());
    for j in pending.drain(..) {
        if batch.len() < limit && group(&j) == chosen {
            batch.push(j);
        } else {
            rest.push_back(j);
        }
    }
    *pending = rest;
    Some(batch)
}

fn run_batch(shared: &Shared, batch: Vec<Job>, config: &BatchConfig) {
    let program = batch[0].program.clone();
    let n = batch.len();
    let mut txn = shared.engine.begin();
    let outcome = if n == 1 || !config.merges(program.name()) {
        debug_assert_eq!(n, 1);
        program.execute_original(&mut txn, &batch[0].args).map(|o| vec![o])
    } else {
        let args: Vec<&Args> = batch.iter().map(|j| &j.args).collect();
        program.execute_merged(&mut txn, &args)
    };
    let outcome = outcome.and_then(|outs| {
        if outs.len() != n {
            return Err(ProgramError::Merge(format!("{} outputs for {n} invocations", outs.len())));
        }
        txn.commit().map(|_| outs).map_err(ProgramError::from)
    });
    let c = &shared.recorder.counters;
    c.batches.fetch_add(1, Ordering::Relaxed);
    c.batched_invocations.fetch_add(n as u64, Ordering::Relaxed);
    if n >= 2 {
        c.merged_batches.fetch_add(1, Ordering::Relaxed);
    }
    let statuses: Vec<Status> = match outcome {
        Ok(outs) => {
            c.completed.fetch_add(n as u64, Ordering::Relaxed);
            outs.into_iter().map(Status::Ok).collect()
        }
        Err(e) => {
            // Dropping an active transaction aborts it.
            drop(txn);
            if e.is_retryable() {
                c.retried.fetch_add(n as u64, Ordering::Relaxed);
                vec![Status::Retry(e.to_string()); n]
            } else {
                tracing::debug!(txn = program.name(), error = %e, "batch failed");
                c.errors.fetch_add(n as u64, Ordering::Relaxed);
                vec![Status::Error(e.to_string()); n]
            }
        }
    };
    for (job, status) in batch.into_iter().zip(statuses) {
        shared.recorder.latency(job.arrived.elapsed());
        let _ = job.reply.send(status);
    }
}
