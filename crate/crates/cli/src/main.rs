mod serve;
mod tune;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::Value as Json;
use txmerge_core::analyzer;
use txmerge_core::rewrite::Rewriter;
use txmerge_core::{build_template, plan_batch, render, Dialect, Schema, TransactionTemplate, Value};
use txmerge_workload::bench::{self, Mode, Workload, WorkloadSpec};
use txmerge_workload::oracle::{oracle_check, OracleSpec};
use txmerge_workload::tpcc::Scale;

#[derive(Parser)]
#[command(name = "txmerge", version, about = "Transaction-merging middleware")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the merge groups of a transaction template.
    Analyze {
        template: PathBuf,
        /// Table definitions the template refers to.
        #[arg(long, default_value = "templates/tpcc_schema.json")]
        schema: PathBuf,
    },
    /// Print the merged statements for a batch of invocations.
    Rewrite {
        template: PathBuf,
        /// JSON array of argument objects, one per invocation.
        args: PathBuf,
        #[arg(long, default_value = "templates/tpcc_schema.json")]
        schema: PathBuf,
    },
    /// Run the merger service over TCP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
    /// Tune worker count and batch size of a running service.
    Tune {
        #[arg(long)]
        endpoint: String,
        #[arg(long, default_value_t = 20)]
        wmax: u32,
        #[arg(long, default_value_t = 10)]
        bmax: u32,
        #[arg(long, default_value_t = 30_000)]
        window_ms: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Iteration cap after the initial samples.
        #[arg(long, default_value_t = 25)]
        cap: usize,
        /// Batch timeout applied with every configuration.
        #[arg(long, default_value_t = 2)]
        timeout_ms: u64,
    },
    /// Measure a workload in-process.
    Bench {
        #[arg(long, default_value = "mixed")]
        workload: Workload,
        #[arg(long, default_value = "service-merged")]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        scale_w: i64,
        #[arg(long, default_value_t = 8)]
        clients: usize,
        /// Batch sizes, comma separated; one run each.
        #[arg(long, value_delimiter = ',', default_value = "8")]
        batch: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        duration_s: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        /// Simulated per-statement server cost in microseconds.
        #[arg(long)]
        statement_cost_us: Option<u64>,
        /// Also run the serial oracle (TPC-C, service-merged only).
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare merged batches against serial execution.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_batch: usize,
    },
}

fn load_template(path: &Path, schema: &Path) -> Result<TransactionTemplate> {
    let schema_text = std::fs::read_to_string(schema).with_context(|| format!("reading {}", schema.display()))?;
    let schema = Schema::from_json_str(&schema_text).with_context(|| format!("parsing {}", schema.display()))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    build_template(&text, &schema).with_context(|| format!("building {}", path.display()))
}

fn analyze(template: &Path, schema: &Path) -> Result<()> {
    let t = load_template(template, schema)?;
    let report = analyzer::group(&t);
    print!("{}", report.to_table(&t));
    println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    Ok(())
}

fn rewrite(template: &Path, args: &Path, schema: &Path) -> Result<()> {
    let t = load_template(template, schema)?;
    let text = std::fs::read_to_string(args).with_context(|| format!("reading {}", args.display()))?;
    let batch: Vec<serde_json::Map<String, Json>> = serde_json::from_str(&text).context("arguments must be a JSON array of objects")?;
    let lookup = |k: usize, p: &str| batch.get(k)?.get(p).and_then(|v| Value::from_json(v).ok());
    let plan = plan_batch(&t, batch.len(), &lookup, &Rewriter::new())?;
    for p in &plan.statements {
        println!("{};", render(&p.statement, Dialect::MySql));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_bench(
    workload: Workload,
    mode: Mode,
    scale_w: i64,
    clients: usize,
    batches: Vec<usize>,
    duration_s: u64,
    seed: u64,
    workers: usize,
    statement_cost_us: Option<u64>,
    verify: bool,
    csv: Option<PathBuf>,
) -> Result<()> {
    let mut spec = WorkloadSpec {
        workload,
        mode,
        scale: Scale { warehouses: scale_w, ..Scale::default() },
        clients,
        batches,
        duration: Duration::from_secs(duration_s),
        workers,
        seed,
        verify,
        ..WorkloadSpec::default()
    };
    if let Some(us) = statement_cost_us {
        spec.statement_cost = Duration::from_micros(us);
    }
    let reports = bench::run(&spec).map_err(anyhow::Error::msg)?;
    let out = bench::to_csv(&reports);
    print!("{out}");
    for r in &reports {
        if let Some(v) = &r.oracle {
            println!("# oracle (batch {}): {} trials, {} mismatches", r.batch, v.trials, v.mismatches.len());
        }
    }
    if let Some(path) = csv {
        std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run_oracle(trials: usize, seed: u64, max_batch: usize) -> Result<()> {
    let v = oracle_check(&OracleSpec { trials, seed, max_batch, ..OracleSpec::default() }).map_err(anyhow::Error::msg)?;
    println!("{} batches, {} invocations, {} resubmitted", v.trials, v.invocations, v.retries);
    if let Some(m) = v.mismatches.first() {
        println!("{}", serde_json::to_string_pretty(&serde_json::json!({
            "trial": m.trial,
            "txn": m.txn,
            "args": m.args,
            "serial": m.serial,
            "merged": m.merged,
            "serial_digest": m.serial_digest,
            "merged_digest": m.merged_digest,
            "state_diff": m.state_diff,
        }))?);
        bail!("merged execution diverged from serial execution");
    }
    println!("no mismatches");
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Analyze { template, schema } => analyze(&template, &schema),
        Command::Rewrite { template, args, schema } => rewrite(&template, &args, &schema),
        Command::Serve { config, listen } => serve::run(&config, &listen),
        Command::Tune { endpoint, wmax, bmax, window_ms, seed, cap, timeout_ms } => {
            tune::run(&endpoint, wmax, bmax, Duration::from_millis(window_ms), seed, cap, timeout_ms)
        }
        Command::Bench { workload, mode, scale_w, clients, batch, duration_s, seed, workers, statement_cost_us, verify, csv } => {
            run_bench(workload, mode, scale_w, clients, batch, duration_s, seed, workers, statement_cost_us, verify, csv)
        }
        Command::OracleCheck { trials, seed, max_batch } => run_oracle(trials, seed, max_batch),
    }
}
