use std::time::Duration;

use anyhow::Result;
use txmerge_service::wire::Client;
use txmerge_service::BatchConfig;
use txmerge_tuner::{tune_loop, Config, Measurer, SearchSpace, TraceRow, TuneOptions, TunerError};

/// Measures a remote service through its wire interface: apply the
/// configuration, let it settle, then read completed invocations per second
/// over the window.
pub struct ServiceMeasurer {
    client: Client,
    timeout_ms: u64,
}

impl ServiceMeasurer {
    pub fn connect(endpoint: &str, timeout_ms: u64) -> Result<Self, TunerError> {
        let client = Client::connect(endpoint).map_err(|e| TunerError::ServiceUnreachable(format!("{endpoint}: {e}")))?;
        Ok(ServiceMeasurer { client, timeout_ms })
    }
}

fn unreachable(e: impl std::fmt::Display) -> TunerError {
    TunerError::ServiceUnreachable(e.to_string())
}

impl Measurer for ServiceMeasurer {
    fn measure(&mut self, config: Config, window: Duration) -> Result<f64, TunerError> {
        let batch = BatchConfig::new(config.workers as usize, config.batch as usize, self.timeout_ms);
        self.client.set_config(&batch).map_err(unreachable)?;
        std::thread::sleep((window / 10).min(Duration::from_secs(2)));
        self.client.get_stats(true).map_err(unreachable)?;
        std::thread::sleep(window);
        Ok(self.client.get_stats(false).map_err(unreachable)?.throughput)
    }
}

pub fn run(endpoint: &str, wmax: u32, bmax: u32, window: Duration, seed: u64, cap: usize, timeout_ms: u64) -> Result<()> {
    let space = SearchSpace::new(wmax, bmax)?;
    let mut measurer = ServiceMeasurer::connect(endpoint, timeout_ms)?;
    let result = tune_loop(&mut measurer, &space, TuneOptions { cap, window, seed, ..TuneOptions::default() })?;
    println!("{}", TraceRow::csv_header());
    for row in &result.trace {
        println!("{}", row.to_csv());
    }
    eprintln!(
        "best W={} B={} at {:.1}/s after {} iterations{}",
        result.best.workers,
        result.best.batch,
        result.best_throughput,
        result.iterations,
        if result.capped { " (capped)" } else { "" }
    );
    Ok(())
}
