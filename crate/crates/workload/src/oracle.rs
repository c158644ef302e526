//! The serial-execution oracle: batches of random invocations run once
//! through the merging service and once, one transaction per invocation in
//! batch order, on a mirror database. Both the per-invocation results and
//! the database digests must agree after every batch.

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value as Json;
use txmerge_core::rewrite::{Mutation, Rewriter};
use txmerge_engine::{Engine, EngineConfig, EngineError};
use txmerge_service::{Args, BatchConfig, ProgramError, Service, Status, TransactionProgram};

use crate::exec::Exec;
use crate::gen::TpccGen;
use crate::neworder::{self, NewOrder};
use crate::payment::{self, Payment};
use crate::tpcc::{self, Scale};

#[derive(Debug, Clone)]
pub struct OracleSpec {
    pub trials: usize,
    pub max_batch: usize,
    pub scale: Scale,
    pub workers: usize,
    pub seed: u64,
    /// Corrupts the new-order rewriter; used to show the oracle notices.
    pub mutation: Mutation,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { trials: 1000, max_batch: 8, scale: Scale::default(), workers: 2, seed: 1, mutation: Mutation::None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub trial: usize,
    pub txn: String,
    pub args: Vec<Args>,
    pub serial: Vec<Json>,
    pub merged: Vec<Status>,
    pub serial_digest: String,
    pub merged_digest: String,
    /// Snapshot lines present on only one side, prefixed `-` (serial) or
    /// `+` (merged).
    pub state_diff: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OracleVerdict {
    pub trials: usize,
    pub invocations: usize,
    /// Trials per batch size, index = size.
    pub sizes: Vec<usize>,
    /// Batches the service asked to retry; each was resubmitted.
    pub retries: usize,
    pub mismatches: Vec<Mismatch>,
}

impl OracleVerdict {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn state_diff(serial: &Engine, merged: &Engine) -> Vec<String> {
    let (Ok(a), Ok(b)) = (serial.snapshot(), merged.snapshot()) else {
        return vec!["snapshot unavailable".into()];
    };
    let only = |x: &[String], y: &[String], sign: char| {
        let ys: std::collections::HashSet<&String> = y.iter().collect();
        x.iter().filter(|l| !ys.contains(l)).map(|l| format!("{sign}{l}")).collect::<Vec<_>>()
    };
    let mut out = only(&a.lines, &b.lines, '-');
    out.extend(only(&b.lines, &a.lines, '+'));
    out
}

/// One invocation of either template, kept typed for the serial side.
enum Call {
    NewOrder(neworder::NewOrderArgs),
    Payment(payment::PaymentArgs),
}

impl Call {
    fn args(&self) -> Args {
        match self {
            Call::NewOrder(a) => a.to_args(),
            Call::Payment(a) => a.to_args(),
        }
    }

    fn run(&self, db: &mut dyn Exec) -> Result<Json, ProgramError> {
        match self {
            Call::NewOrder(a) => neworder::run_original(db, a),
            Call::Payment(a) => payment::run_original(db, a),
        }
    }
}

fn serial_call(engine: &Engine, call: &Call) -> Result<Json, ProgramError> {
    let mut txn = engine.begin();
    let out = call.run(&mut txn)?;
    txn.commit()?;
    Ok(out)
}

/// Runs the oracle. Errors only if the fixture cannot be built.
pub fn oracle_check(spec: &OracleSpec) -> Result<OracleVerdict, String> {
    spec.scale.validate()?;
    if spec.max_batch == 0 {
        return Err("max_batch must be at least 1".into());
    }
    // Lock waits can only arise between workers; keep them short so a
    // wedged batch shows up as a retry rather than a hang.
    let config = EngineConfig { lock_timeout: Duration::from_millis(200), ..Default::default() };
    let base = tpcc::load(spec.scale, spec.seed, config).map_err(|e| e.to_string())?;
    let mirror = base.fork().map_err(|e| e.to_string())?;
    let programs: Vec<Arc<dyn TransactionProgram>> = vec![
        Arc::new(NewOrder::with_rewriter(Rewriter::new().mutation(spec.mutation))),
        Arc::new(Payment::new()),
    ];
    let batching = |size: usize| BatchConfig::new(spec.workers, size, 60_000);
    let service = Service::new(base, programs, batching(spec.max_batch)).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gen = TpccGen::new(spec.scale, spec.seed.wrapping_add(1), 1);
    let mut verdict = OracleVerdict { sizes: vec![0; spec.max_batch + 1], ..Default::default() };

    for trial in 0..spec.trials {
        let size = rng.gen_range(1..=spec.max_batch);
        let (w, d) = gen.district();
        let neworders = rng.gen_bool(0.5);
        let calls: Vec<Call> = (0..size)
            .map(|_| if neworders { Call::NewOrder(gen.neworder_at(w, d)) } else { Call::Payment(gen.payment_at(w, d)) })
            .collect();
        let txn = if neworders { "neworder" } else { "payment" };
        let args: Vec<Args> = calls.iter().map(Call::args).collect();

        service.set_config(batching(size)).map_err(|e| e.to_string())?;
        let merged = loop {
            let receivers: Vec<_> = args
                .iter()
                .map(|a| service.submit(txn, a.clone()).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            let statuses: Vec<Status> = receivers
                .into_iter()
                .map(|r| r.recv().unwrap_or_else(|_| Status::Error("reply dropped".into())))
                .collect();
            if statuses.iter().all(|s| matches!(s, Status::Retry(_))) {
                verdict.retries += 1;
                continue;
            }
            break statuses;
        };
        let serial: Vec<Json> = calls
            .iter()
            .map(|c| serial_call(&mirror, c).unwrap_or_else(|e| Json::String(format!("error: {e}"))))
            .collect();

        let serial_digest = mirror.digest().map_err(|e: EngineError| e.to_string())?;
        let merged_digest = service.engine().digest().map_err(|e| e.to_string())?;
        let same_results = merged.iter().zip(&serial).all(|(m, s)| matches!(m, Status::Ok(v) if v == s));
        verdict.trials += 1;
        verdict.invocations += size;
        verdict.sizes[size] += 1;
        if !same_results || serial_digest != merged_digest {
            verdict.mismatches.push(Mismatch {
                trial,
                txn: txn.into(),
                args,
                serial,
                merged,
                state_diff: state_diff(&mirror, service.engine()),
                serial_digest,
                merged_digest,
            });
            // Later trials would only repeat the divergence.
            break;
        }
    }
    service.shutdown();
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_member_batches_agree() {
        let v = oracle_check(&OracleSpec { trials: 20, max_batch: 1, ..Default::default() }).unwrap();
        assert!(v.passed(), "{:#?}", v.mismatches);
        assert_eq!(v.invocations, 20);
    }
}
