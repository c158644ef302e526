use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use txmerge_core::partition::PartitionPolicy;
use txmerge_core::{build_template, Schema};
use txmerge_engine::{Engine, EngineConfig};
use txmerge_service::wire::Server;
use txmerge_service::{BatchConfig, PolicyLevel, Service, TemplateProgram, TransactionProgram};
use txmerge_workload::bench::{self, Workload, WorkloadSpec};
use txmerge_workload::tpcc::Scale;

/// Contents of the `serve --config` file. Paths are relative to the file.
///
/// Either `workload` names a built-in workload (its tables are loaded and its
/// programs registered), or `schema` gives empty tables for `templates`.
/// Templates may be combined with a workload when they use its tables.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub batch: BatchConfig,
    pub merger_policy: Option<PartitionPolicy>,
    pub worker_policy: Option<PartitionPolicy>,
    pub workload: Option<String>,
    pub scale_w: i64,
    pub micro_rows: i64,
    pub orders: i64,
    pub seed: u64,
    pub lock_timeout_ms: u64,
    pub statement_cost_us: u64,
    pub schema: Option<PathBuf>,
    pub templates: Vec<PathBuf>,
    /// In-process clients driving the workload, so that a tuner has load to
    /// measure.
    pub load_clients: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        let spec = WorkloadSpec::default();
        ServeConfig {
            batch: BatchConfig::default(),
            merger_policy: None,
            worker_policy: None,
            workload: None,
            scale_w: 1,
            micro_rows: spec.micro_rows,
            orders: spec.orders,
            seed: 1,
            lock_timeout_ms: EngineConfig::default().lock_timeout.as_millis() as u64,
            statement_cost_us: 0,
            schema: None,
            templates: Vec::new(),
            load_clients: 0,
        }
    }
}

fn relative(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

struct Built {
    engine: Engine,
    programs: Vec<Arc<dyn TransactionProgram>>,
    load: Option<WorkloadSpec>,
}

fn build(cfg: &ServeConfig, base: &Path) -> Result<Built> {
    let engine_config = EngineConfig {
        lock_timeout: Duration::from_millis(cfg.lock_timeout_ms),
        statement_cost: Duration::from_micros(cfg.statement_cost_us),
    };
    let (engine, mut programs, load) = match &cfg.workload {
        Some(name) => {
            let workload: Workload = name.parse().map_err(anyhow::Error::msg)?;
            let spec = WorkloadSpec {
                workload,
                scale: Scale { warehouses: cfg.scale_w, ..Scale::default() },
                micro_rows: cfg.micro_rows,
                orders: cfg.orders,
                clients: cfg.load_clients.max(1),
                statement_cost: engine_config.statement_cost,
                seed: cfg.seed,
                ..WorkloadSpec::default()
            };
            spec.validate().map_err(anyhow::Error::msg)?;
            let engine = bench::fixture(&spec).map_err(anyhow::Error::msg)?;
            (engine, bench::programs(workload), (cfg.load_clients > 0).then_some(spec))
        }
        None => {
            let Some(path) = &cfg.schema else { bail!("config needs a workload or a schema") };
            let path = relative(base, path);
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            (Engine::with_config(Schema::from_json_str(&text)?, engine_config), Vec::new(), None)
        }
    };
    if cfg.load_clients > 0 && load.is_none() {
        bail!("load_clients needs a built-in workload");
    }
    for t in &cfg.templates {
        let path = relative(base, t);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let template = build_template(&text, engine.schema()).with_context(|| format!("building {}", path.display()))?;
        programs.push(Arc::new(TemplateProgram::new(template)));
    }
    if programs.is_empty() {
        bail!("no transaction programs configured");
    }
    Ok(Built { engine, programs, load })
}

pub fn run(config: &Path, listen: &str) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: ServeConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let Built { engine, programs, load } = build(&cfg, base)?;
    let names: Vec<String> = programs.iter().map(|p| p.name().to_string()).collect();
    let service = Arc::new(Service::new(engine, programs, cfg.batch.clone())?);
    if let Some(p) = &cfg.merger_policy {
        service.set_policy(PolicyLevel::Merger, p.clone())?;
    }
    if let Some(p) = &cfg.worker_policy {
        service.set_policy(PolicyLevel::Worker, p.clone())?;
    }
    let server = Server::start(listen, service.clone()).with_context(|| format!("listening on {listen}"))?;
    tracing::info!(addr = %server.local_addr(), transactions = ?names, "serving");
    if let Some(spec) = load {
        let svc = service.clone();
        std::thread::spawn(move || {
            let never = AtomicBool::new(false);
            bench::drive(&svc, &spec, &never);
        });
    }
    server.join();
    Ok(())
}
