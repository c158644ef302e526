use std::collections::BTreeMap;

use serde_json::{json, Map, Value as Json};
use txmerge_core::rewrite::{dispatch_results, plan_batch, Rewriter};
use txmerge_core::{ModelError, Operand, ResultSet, Statement, StatementKind, TransactionTemplate, Value};
use txmerge_engine::{EngineError, Txn};

/// Named invocation arguments.
pub type Args = Map<String, Json>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid arguments: {0}")]
    Invalid(String),
    #[error("merge failed: {0}")]
    Merge(String),
}

impl ProgramError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProgramError::Engine(e) if e.is_retryable())
    }
}

impl From<ModelError> for ProgramError {
    fn from(e: ModelError) -> Self {
        ProgramError::Invalid(e.to_string())
    }
}

/// A transaction type the service can run one invocation at a time
/// (`execute_original`) or as a merged batch (`execute_merged`). Both run
/// inside a backend transaction owned by the caller; the merged form must be
/// equivalent to running the originals in batch order.
pub trait TransactionProgram: Send + Sync {
    fn name(&self) -> &str;

    /// Routing key (e.g. warehouse, district).
    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError>;

    /// Key for final-level grouping inside a worker; defaults to the
    /// partition key.
    fn merge_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        self.partition_key(args)
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError>;

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError>;
}

/// Reads argument `name` as a statement value.
pub fn arg(args: &Args, name: &str) -> Result<Value, ProgramError> {
    let v = args.get(name).ok_or_else(|| ProgramError::Invalid(format!("missing argument {name}")))?;
    Value::from_json(v).map_err(|e| ProgramError::Invalid(format!("argument {name}: {e}")))
}

pub fn arg_int(args: &Args, name: &str) -> Result<i64, ProgramError> {
    arg(args, name)?.as_int().ok_or_else(|| ProgramError::Invalid(format!("argument {name} is not an integer")))
}

/// Rows of a result set as plain JSON arrays.
pub fn rows_json(rs: &ResultSet) -> Json {
    Json::Array(rs.rows.iter().map(|r| Json::Array(r.iter().map(Value::to_plain_json).collect())).collect())
}

/// Runs any template mechanically: originals bind every statement from the
/// arguments; merged batches go through the plan rewriter. Templates with
/// declared dataflow run their members sequentially instead of merging.
/// The output is the list of SELECT results, each a list of rows.
pub struct TemplateProgram {
    template: TransactionTemplate,
    rewriter: Rewriter,
}

impl TemplateProgram {
    pub fn new(template: TransactionTemplate) -> Self {
        TemplateProgram { template, rewriter: Rewriter::new() }
    }

    pub fn with_rewriter(template: TransactionTemplate, rewriter: Rewriter) -> Self {
        TemplateProgram { template, rewriter }
    }

    pub fn template(&self) -> &TransactionTemplate {
        &self.template
    }
}

impl TransactionProgram for TemplateProgram {
    fn name(&self) -> &str {
        &self.template.name
    }

    fn partition_key(&self, args: &Args) -> Result<Vec<Value>, ProgramError> {
        self.template.partition_key.iter().map(|k| arg(args, k)).collect()
    }

    fn execute_original(&self, txn: &mut Txn, args: &Args) -> Result<Json, ProgramError> {
        let mut bound: Map<String, Json> = args.clone();
        let mut selects = Vec::new();
        for (i, stmt) in self.template.statements.iter().enumerate() {
            let s = stmt.bind(&|p: &str| bound.get(p).and_then(|v| Value::from_json(v).ok()))?;
            let rs = txn.execute(&s)?;
            for flow in self.template.dataflow.iter().filter(|f| f.from == i + 1) {
                if let Some(v) = rs.first(&flow.column) {
                    bound.insert(flow.param.clone(), v.to_json());
                }
            }
            if stmt.kind == StatementKind::Select {
                selects.push(rows_json(&rs));
            }
        }
        Ok(Json::Array(selects))
    }

    fn execute_merged(&self, txn: &mut Txn, batch: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        if !self.template.dataflow.is_empty() {
            return batch.iter().map(|a| self.execute_original(txn, a)).collect();
        }
        let mut outputs = Vec::with_capacity(batch.len());
        for run in self.conflict_free_runs(batch)? {
            outputs.extend(self.merge_run(txn, &batch[run])?);
        }
        Ok(outputs)
    }
}

impl TemplateProgram {
    /// Statement-wise merging reorders the statements of different members,
    /// which is only equivalent to batch order when no two members touch a
    /// common row with a write. Splits the batch into maximal contiguous runs
    /// free of such conflicts.
    fn conflict_free_runs(&self, batch: &[&Args]) -> Result<Vec<std::ops::Range<usize>>, ProgramError> {
        let bound: Vec<Vec<Statement>> = batch
            .iter()
            .map(|a| {
                self.template
                    .statements
                    .iter()
                    .map(|s| s.bind(&|p: &str| a.get(p).and_then(|v| Value::from_json(v).ok())))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        let prints: Vec<Vec<Footprint>> = bound.iter().map(|ss| ss.iter().map(Footprint::of).collect()).collect();
        let mut runs = Vec::new();
        let mut start = 0;
        for k in 1..batch.len() {
            if (start..k).any(|j| conflicts(&prints[j], &prints[k])) {
                runs.push(start..k);
                start = k;
            }
        }
        runs.push(start..batch.len());
        Ok(runs)
    }

    fn merge_run(&self, txn: &mut Txn, run: &[&Args]) -> Result<Vec<Json>, ProgramError> {
        if run.len() == 1 {
            return Ok(vec![self.execute_original(txn, run[0])?]);
        }
        let lookup = |k: usize, p: &str| run[k].get(p).and_then(|v| Value::from_json(v).ok());
        let plan = plan_batch(&self.template, run.len(), &lookup, &self.rewriter)
            .map_err(|e| ProgramError::Merge(e.to_string()))?;
        let mut outputs: Vec<Vec<Json>> = vec![Vec::new(); run.len()];
        for p in &plan.statements {
            let rs = txn.execute(&p.statement)?;
            if p.statement.kind == StatementKind::Select {
                let parts = dispatch_results(&rs, &p.dispatch, run.len()).map_err(|e| ProgramError::Merge(e.to_string()))?;
                for (out, part) in outputs.iter_mut().zip(parts) {
                    out.push(rows_json(&part));
                }
            }
        }
        Ok(outputs.into_iter().map(Json::Array).collect())
    }
}

/// Rows a statement may touch, as column-equality patterns. An empty
/// pattern matches every row.
struct Footprint<'a> {
    table: &'a str,
    write: bool,
    patterns: Vec<BTreeMap<&'a str, &'a Value>>,
}

impl<'a> Footprint<'a> {
    fn of(s: &'a Statement) -> Self {
        let patterns = match s.kind {
            StatementKind::Insert => s
                .rows
                .iter()
                .map(|r| {
                    s.columns
                        .iter()
                        .zip(r)
                        .filter_map(|(c, o)| match o {
                            Operand::Value(v) => Some((c.as_str(), v)),
                            _ => None,
                        })
                        .collect()
                })
                .collect(),
            _ => vec![s
                .predicate
                .as_ref()
                .and_then(|p| p.equality_terms())
                .map(|t| t.into_iter().collect())
                .unwrap_or_default()],
        };
        Footprint { table: &s.table, write: s.kind != StatementKind::Select, patterns }
    }

    fn overlaps(&self, other: &Footprint<'_>) -> bool {
        self.table == other.table
            && self.patterns.iter().any(|a| {
                other.patterns.iter().any(|b| a.iter().all(|(c, v)| b.get(c).is_none_or(|w| w.sql_eq(v) || w.is_null() || v.is_null())))
            })
    }
}

fn conflicts(a: &[Footprint<'_>], b: &[Footprint<'_>]) -> bool {
    a.iter().any(|x| b.iter().any(|y| (x.write || y.write) && x.overlaps(y)))
}

/// Convenience for building argument maps in code.
pub fn args(pairs: impl IntoIterator<Item = (&'static str, Json)>) -> Args {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// `{"dec": "<value>"}`, the tagged JSON form of a decimal argument.
pub fn dec_arg(s: &str) -> Json {
    json!({ "dec": s })
}
