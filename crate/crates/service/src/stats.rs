use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// Latency samples kept per window; older windows are discarded on reset.
const MAX_SAMPLES: usize = 1 << 20;

#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub completed: AtomicU64,
    pub retried: AtomicU64,
    pub errors: AtomicU64,
    pub batches: AtomicU64,
    pub merged_batches: AtomicU64,
    pub batched_invocations: AtomicU64,
    pub fallback_routed: AtomicU64,
}

#[derive(Debug)]
pub(crate) struct Window {
    started: Instant,
    completed_at_start: u64,
    latencies_ms: Vec<f64>,
}

#[derive(Debug)]
pub(crate) struct Recorder {
    pub counters: Counters,
    window: Mutex<Window>,
}

impl Recorder {
    pub fn new() -> Self {
        Recorder {
            counters: Counters::default(),
            window: Mutex::new(Window { started: Instant::now(), completed_at_start: 0, latencies_ms: Vec::new() }),
        }
    }

    pub fn latency(&self, d: Duration) {
        let mut w = self.window.lock();
        if w.latencies_ms.len() < MAX_SAMPLES {
            w.latencies_ms.push(d.as_secs_f64() * 1e3);
        }
    }

    pub fn snapshot(&self, reset: bool) -> ServiceStats {
        let c = &self.counters;
        let load = |a: &AtomicU64| a.load(Ordering::Relaxed);
        let completed = load(&c.completed);
        let batches = load(&c.batches);
        let mut w = self.window.lock();
        let window_secs = w.started.elapsed().as_secs_f64();
        let in_window = completed - w.completed_at_start;
        let mut lat = w.latencies_ms.clone();
        lat.sort_by(f64::total_cmp);
        let stats = ServiceStats {
            completed,
            retried: load(&c.retried),
            errors: load(&c.errors),
            batches,
            merged_batches: load(&c.merged_batches),
            mean_batch_size: if batches == 0 { 0.0 } else { load(&c.batched_invocations) as f64 / batches as f64 },
            fallback_routed: load(&c.fallback_routed),
            window_completed: in_window,
            window_secs,
            throughput: if window_secs > 0.0 { in_window as f64 / window_secs } else { 0.0 },
            p50_ms: percentile(&lat, 0.50),
            p95_ms: percentile(&lat, 0.95),
            p99_ms: percentile(&lat, 0.99),
            statements_executed: 0,
        };
        if reset {
            w.started = Instant::now();
            w.completed_at_start = completed;
            w.latencies_ms.clear();
        }
        stats
    }
}

/// Nearest-rank percentile of sorted samples; 0 when empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStats {
    /// Invocations answered Ok.
    pub completed: u64,
    pub retried: u64,
    pub errors: u64,
    pub batches: u64,
    /// Batches with at least two members.
    pub merged_batches: u64,
    pub mean_batch_size: f64,
    /// Invocations routed to the fallback worker.
    pub fallback_routed: u64,
    /// Completions and elapsed time since the last window reset.
    pub window_completed: u64,
    pub window_secs: f64,
    pub throughput: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    /// Backend statements executed since start.
    pub statements_executed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&[7.0], 0.99), 7.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }

    #[test]
    fn window_reset() {
        let r = Recorder::new();
        r.counters.completed.fetch_add(5, Ordering::Relaxed);
        r.latency(Duration::from_millis(3));
        let s = r.snapshot(true);
        assert_eq!(s.window_completed, 5);
        assert!((s.p50_ms - 3.0).abs() < 1e-9);
        let s = r.snapshot(false);
        assert_eq!(s.window_completed, 0);
        assert_eq!(s.completed, 5);
        assert_eq!(s.p99_ms, 0.0);
    }
}
