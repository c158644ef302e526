use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicI64, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::Serialize;
use sha2::{Digest, Sha256};
use txmerge_core::expr::{add_values, RowAccess};
use txmerge_core::{
    ColumnType, Dialect, Expr, MergedPlan, Predicate, ProjItem, ResultSet, Schema, Statement, StatementKind,
    TableSchema, Value,
};

use crate::access::{key_exact, plan_access, Access};
use crate::error::EngineError;
use crate::lock::{LockKey, LockMode, LockTable, TxnId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    /// Lock waits longer than this abort the waiting transaction.
    pub lock_timeout: Duration,
    /// Fixed CPU cost charged to every statement (busy-wait). Zero by default;
    /// benchmarks use it to stand in for per-statement server overhead.
    pub statement_cost: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { lock_timeout: Duration::from_millis(200), statement_cost: Duration::ZERO }
    }
}

#[derive(Debug, Clone)]
struct Row {
    values: Vec<Value>,
    /// Deleted by a transaction that has not finished yet.
    deleted: bool,
}

struct Table {
    schema: TableSchema,
    index: HashMap<String, usize>,
    types: Vec<ColumnType>,
    pk: Vec<usize>,
    rows: RwLock<BTreeMap<Vec<Value>, Row>>,
    counters: [AtomicU64; 4],
}

impl Table {
    fn new(schema: &TableSchema) -> Table {
        Table {
            index: schema.columns.iter().enumerate().map(|(i, c)| (c.name.clone(), i)).collect(),
            types: schema.columns.iter().map(|c| c.ty).collect(),
            pk: schema.primary_key_indices(),
            schema: schema.clone(),
            rows: RwLock::new(BTreeMap::new()),
            counters: Default::default(),
        }
    }

    fn column(&self, name: &str) -> Result<usize, EngineError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| EngineError::Schema(format!("unknown column {}.{}", self.schema.name, name)))
    }

    fn key_of(&self, values: &[Value]) -> Vec<Value> {
        self.pk.iter().map(|&i| values[i].clone()).collect()
    }

    fn conform(&self, values: Vec<Value>) -> Result<Vec<Value>, EngineError> {
        if values.len() != self.types.len() {
            return Err(EngineError::Schema(format!(
                "{} expects {} columns, got {}",
                self.schema.name,
                self.types.len(),
                values.len()
            )));
        }
        let out = values
            .into_iter()
            .zip(&self.types)
            .zip(&self.schema.columns)
            .map(|((v, ty), col)| {
                v.coerce(*ty).ok_or_else(|| {
                    EngineError::TypeMismatch(format!("{} value {} for {} column {}", v.type_name(), v, col.ty_name(), col.name))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if self.pk.iter().any(|&i| out[i].is_null()) {
            return Err(EngineError::ConstraintViolation(format!("NULL primary key in {}", self.schema.name)));
        }
        Ok(out)
    }
}

trait TypeName {
    fn ty_name(&self) -> &'static str;
}

impl TypeName for txmerge_core::ColumnDef {
    fn ty_name(&self) -> &'static str {
        match self.ty {
            ColumnType::Int => "int",
            ColumnType::Decimal => "decimal",
            ColumnType::Str => "string",
            ColumnType::Timestamp => "timestamp",
        }
    }
}

struct RowRef<'a> {
    table: &'a Table,
    values: &'a [Value],
}

impl RowAccess for RowRef<'_> {
    fn get(&self, column: &str) -> Option<&Value> {
        self.table.index.get(column).map(|&i| &self.values[i])
    }
}

#[derive(Default)]
struct Counters {
    statements: AtomicU64,
    rows_locked: AtomicU64,
    lock_waits: AtomicU64,
    aborts: AtomicU64,
    commits: AtomicU64,
}

/// Per-table statement counts by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindCounts {
    pub select: u64,
    pub insert: u64,
    pub update: u64,
    pub delete: u64,
}

impl KindCounts {
    pub fn get(&self, kind: StatementKind) -> u64 {
        match kind {
            StatementKind::Select => self.select,
            StatementKind::Insert => self.insert,
            StatementKind::Update => self.update,
            StatementKind::Delete => self.delete,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EngineStats {
    pub statements_executed: u64,
    pub rows_locked: u64,
    pub lock_waits: u64,
    pub aborts: u64,
    pub commits: u64,
    pub per_table: BTreeMap<String, KindCounts>,
}

impl EngineStats {
    pub fn statements(&self, table: &str, kind: StatementKind) -> u64 {
        self.per_table.get(table).map_or(0, |k| k.get(kind))
    }
}

/// Canonical dump of the database: one JSON line per row, tables in name
/// order and rows in primary-key order, plus the SHA-256 of the dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub lines: Vec<String>,
    pub digest: String,
}

impl Snapshot {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

struct Inner {
    schema: Schema,
    tables: Vec<Table>,
    by_name: HashMap<String, usize>,
    locks: LockTable,
    config: EngineConfig,
    next_txn: AtomicU64,
    active: AtomicUsize,
    counters: Counters,
    /// Statements left before an injected failure; negative when disarmed.
    fault: AtomicI64,
}

/// Shared handle to an in-memory database. Cloning is cheap.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("tables", &self.inner.by_name.len()).finish()
    }
}

impl Engine {
    pub fn new(schema: Schema) -> Engine {
        Engine::with_config(schema, EngineConfig::default())
    }

    pub fn with_config(schema: Schema, config: EngineConfig) -> Engine {
        let tables: Vec<Table> = schema.tables.iter().map(Table::new).collect();
        let by_name = tables.iter().enumerate().map(|(i, t)| (t.schema.name.clone(), i)).collect();
        Engine {
            inner: Arc::new(Inner {
                schema,
                tables,
                by_name,
                locks: LockTable::default(),
                config,
                next_txn: AtomicU64::new(1),
                active: AtomicUsize::new(0),
                counters: Counters::default(),
                fault: AtomicI64::new(-1),
            }),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.inner.schema
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.config
    }

    fn table_id(&self, name: &str) -> Result<usize, EngineError> {
        self.inner.by_name.get(name).copied().ok_or_else(|| EngineError::Schema(format!("unknown table {name}")))
    }

    pub fn begin(&self) -> Txn {
        self.inner.active.fetch_add(1, Ordering::SeqCst);
        Txn {
            engine: self.clone(),
            id: self.inner.next_txn.fetch_add(1, Ordering::Relaxed),
            state: TxnState::Active,
            held: HashMap::new(),
            undo: Vec::new(),
        }
    }

    /// Number of row keys currently locked by any transaction.
    pub fn held_locks(&self) -> usize {
        self.inner.locks.held_keys()
    }

    pub fn active_transactions(&self) -> usize {
        self.inner.active.load(Ordering::SeqCst)
    }

    /// Bulk-loads committed rows outside any transaction. Rows are given in
    /// schema column order.
    pub fn load(&self, table: &str, rows: impl IntoIterator<Item = Vec<Value>>) -> Result<usize, EngineError> {
        let t = &self.inner.tables[self.table_id(table)?];
        let mut store = t.rows.write();
        let mut n = 0;
        for values in rows {
            let values = t.conform(values)?;
            let key = t.key_of(&values);
            if store.contains_key(&key) {
                return Err(EngineError::ConstraintViolation(format!("duplicate key {key:?} in {table}")));
            }
            store.insert(key, Row { values, deleted: false });
            n += 1;
        }
        Ok(n)
    }

    /// Committed rows of a table in key order, read without locking.
    pub fn rows(&self, table: &str) -> Result<Vec<Vec<Value>>, EngineError> {
        let t = &self.inner.tables[self.table_id(table)?];
        Ok(t.rows.read().values().filter(|r| !r.deleted).map(|r| r.values.clone()).collect())
    }

    /// One row by primary key, read without locking.
    pub fn row(&self, table: &str, key: &[Value]) -> Result<Option<Vec<Value>>, EngineError> {
        let t = &self.inner.tables[self.table_id(table)?];
        let key: Vec<Value> =
            key.iter().zip(&t.pk).map(|(v, &i)| v.coerce(t.types[i]).unwrap_or_else(|| v.clone())).collect();
        Ok(t.rows.read().get(&key).filter(|r| !r.deleted).map(|r| r.values.clone()))
    }

    /// One cell by primary key, read without locking.
    pub fn value(&self, table: &str, key: &[Value], column: &str) -> Result<Option<Value>, EngineError> {
        let t = &self.inner.tables[self.table_id(table)?];
        let c = t.column(column)?;
        Ok(self.row(table, key)?.map(|r| r[c].clone()))
    }

    pub fn row_count(&self, table: &str) -> Result<usize, EngineError> {
        let t = &self.inner.tables[self.table_id(table)?];
        Ok(t.rows.read().values().filter(|r| !r.deleted).count())
    }

    pub fn snapshot(&self) -> Result<Snapshot, EngineError> {
        let active = self.active_transactions();
        if active > 0 {
            return Err(EngineError::ActiveTxn(active));
        }
        let mut order: Vec<&Table> = self.inner.tables.iter().collect();
        order.sort_by(|a, b| a.schema.name.cmp(&b.schema.name));
        let mut lines = Vec::new();
        let mut hasher = Sha256::new();
        for t in order {
            for row in t.rows.read().values().filter(|r| !r.deleted) {
                let cells: Vec<serde_json::Value> = row.values.iter().map(Value::to_json).collect();
                let line = serde_json::json!({ "table": t.schema.name, "row": cells }).to_string();
                hasher.update(line.as_bytes());
                hasher.update(b"\n");
                lines.push(line);
            }
        }
        Ok(Snapshot { lines, digest: hex::encode(hasher.finalize()) })
    }

    pub fn digest(&self) -> Result<String, EngineError> {
        self.snapshot().map(|s| s.digest)
    }

    /// Deep copy of the committed state with fresh locks and counters.
    pub fn fork(&self) -> Result<Engine, EngineError> {
        let active = self.active_transactions();
        if active > 0 {
            return Err(EngineError::ActiveTxn(active));
        }
        let copy = Engine::with_config(self.inner.schema.clone(), self.inner.config.clone());
        for (src, dst) in self.inner.tables.iter().zip(&copy.inner.tables) {
            *dst.rows.write() = src.rows.read().clone();
        }
        Ok(copy)
    }

    pub fn stats(&self) -> EngineStats {
        let c = &self.inner.counters;
        EngineStats {
            statements_executed: c.statements.load(Ordering::Relaxed),
            rows_locked: c.rows_locked.load(Ordering::Relaxed),
            lock_waits: c.lock_waits.load(Ordering::Relaxed),
            aborts: c.aborts.load(Ordering::Relaxed),
            commits: c.commits.load(Ordering::Relaxed),
            per_table: self
                .inner
                .tables
                .iter()
                .map(|t| {
                    let n = |k: usize| t.counters[k].load(Ordering::Relaxed);
                    (t.schema.name.clone(), KindCounts { select: n(0), insert: n(1), update: n(2), delete: n(3) })
                })
                .collect(),
        }
    }

    /// Arms a one-shot failure: the next `k` statements (engine-wide) succeed
    /// and the one after fails with a retryable abort of its transaction.
    pub fn inject_fault_after(&self, k: u64) {
        self.inner.fault.store(k as i64, Ordering::SeqCst);
    }

    pub fn clear_fault(&self) {
        self.inner.fault.store(-1, Ordering::SeqCst);
    }

    fn take_fault(&self) -> bool {
        let f = &self.inner.fault;
        if f.load(Ordering::Relaxed) < 0 {
            return false;
        }
        let prev = f.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| if n < 0 { None } else { Some(n - 1) });
        matches!(prev, Ok(0))
    }

    /// Runs `body` in a fresh transaction, committing on success and aborting
    /// on error.
    pub fn run<T>(&self, body: impl FnOnce(&mut Txn) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let mut txn = self.begin();
        match body(&mut txn) {
            Ok(v) => {
                txn.commit()?;
                Ok(v)
            }
            Err(e) => {
                if txn.state() == TxnState::Active {
                    txn.abort()?;
                }
                Err(e)
            }
        }
    }
}

/// Renders a merged plan as an SQL script for an external server.
pub fn emit_external_sql(plan: &MergedPlan, dialect: Dialect) -> Result<String, EngineError> {
    plan.render(dialect).map_err(|e| EngineError::Unsupported(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed,
    Aborted,
}

struct Undo {
    table: usize,
    key: Vec<Value>,
    before: Option<Row>,
}

/// A transaction under strict two-phase locking. Dropping an active handle
/// aborts it.
pub struct Txn {
    engine: Engine,
    id: TxnId,
    state: TxnState,
    held: HashMap<LockKey, LockMode>,
    undo: Vec<Undo>,
}

impl std::fmt::Debug for Txn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Txn").field("id", &self.id).field("state", &self.state).finish()
    }
}

impl Drop for Txn {
    fn drop(&mut self) {
        if self.state == TxnState::Active {
            self.finish(false);
        }
    }
}

/// Compiled assignment right-hand side.
enum Compiled<'a> {
    Plain(&'a Expr),
    /// CASE over equality branches on fixed columns, resolved by hash lookup.
    Keyed { cols: Vec<usize>, map: HashMap<Vec<Value>, usize>, branches: Vec<&'a Expr>, otherwise: &'a Expr },
}

impl<'a> Compiled<'a> {
    fn new(expr: &'a Expr, table: &Table) -> Compiled<'a> {
        let Expr::Case { branches, otherwise } = expr else { return Compiled::Plain(expr) };
        let mut names: Option<Vec<&str>> = None;
        let mut map = HashMap::new();
        for (i, (pred, _)) in branches.iter().enumerate() {
            let Some(terms) = pred.equality_terms() else { return Compiled::Plain(expr) };
            let these: Vec<&str> = terms.iter().map(|(c, _)| *c).collect();
            match &names {
                None => names = Some(these),
                Some(n) if *n == these => {}
                Some(_) => return Compiled::Plain(expr),
            }
            let mut key = Vec::with_capacity(terms.len());
            let mut satisfiable = true;
            for (c, v) in terms {
                let Some(&ci) = table.index.get(c) else { return Compiled::Plain(expr) };
                match v.coerce(table.types[ci]) {
                    Some(v) if !v.is_null() => key.push(v),
                    _ => satisfiable = false,
                }
            }
            if satisfiable {
                map.entry(key).or_insert(i);
            }
        }
        let Some(names) = names else { return Compiled::Plain(expr) };
        let cols = names.iter().map(|c| table.index[*c]).collect();
        Compiled::Keyed { cols, map, branches: branches.iter().map(|(_, e)| e).collect(), otherwise }
    }

    fn eval(&self, row: &RowRef<'_>) -> Result<Value, EngineError> {
        match self {
            Compiled::Plain(e) => Ok(e.eval(row)?),
            Compiled::Keyed { cols, map, branches, otherwise } => {
                let key: Vec<Value> = cols.iter().map(|&c| row.values[c].clone()).collect();
                let hit = if key.iter().any(Value::is_null) { None } else { map.get(&key) };
                match hit {
                    Some(&i) => Ok(branches[i].eval(row)?),
                    None => Ok(otherwise.eval(row)?),
                }
            }
        }
    }
}

impl Txn {
    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn state(&self) -> TxnState {
        self.state
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn ensure_active(&self) -> Result<(), EngineError> {
        match self.state {
            TxnState::Active => Ok(()),
            other => Err(EngineError::InvalidState(format!("transaction {} is {:?}", self.id, other))),
        }
    }

    pub fn commit(&mut self) -> Result<(), EngineError> {
        self.ensure_active()?;
        self.finish(true);
        Ok(())
    }

    pub fn abort(&mut self) -> Result<(), EngineError> {
        self.ensure_active()?;
        self.finish(false);
        Ok(())
    }

    fn finish(&mut self, commit: bool) {
        let engine = self.engine.clone();
        let inner = &engine.inner;
        if commit {
            let mut touched: BTreeSet<(usize, &Vec<Value>)> = BTreeSet::new();
            for u in &self.undo {
                touched.insert((u.table, &u.key));
            }
            for (t, key) in touched {
                let mut rows = inner.tables[t].rows.write();
                if rows.get(key).is_some_and(|r| r.deleted) {
                    rows.remove(key);
                }
            }
            inner.counters.commits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.rollback_to(0);
            inner.counters.aborts.fetch_add(1, Ordering::Relaxed);
        }
        self.undo.clear();
        inner.locks.release(self.id, self.held.keys());
        self.held.clear();
        self.state = if commit { TxnState::Committed } else { TxnState::Aborted };
        inner.active.fetch_sub(1, Ordering::SeqCst);
    }

    fn rollback_to(&mut self, mark: usize) {
        let tables = &self.engine.inner.tables;
        while self.undo.len() > mark {
            let u = self.undo.pop().expect("non-empty");
            let mut rows = tables[u.table].rows.write();
            match u.before {
                Some(row) => {
                    rows.insert(u.key, row);
                }
                None => {
                    rows.remove(&u.key);
                }
            }
        }
    }

    fn retryable(&mut self, reason: String) -> EngineError {
        if self.state == TxnState::Active {
            self.finish(false);
        }
        EngineError::Retryable(reason)
    }

    fn lock(&mut self, table: usize, key: &[Value], mode: LockMode) -> Result<(), EngineError> {
        let lk: LockKey = (table, key.to_vec());
        let had = self.held.get(&lk).copied();
        if had == Some(LockMode::Exclusive) || (had == Some(LockMode::Shared) && mode == LockMode::Shared) {
            return Ok(());
        }
        let inner = &self.engine.inner;
        match inner.locks.acquire(self.id, &lk, mode, inner.config.lock_timeout) {
            Some(g) => {
                if g.waited {
                    inner.counters.lock_waits.fetch_add(1, Ordering::Relaxed);
                }
                if had.is_none() {
                    inner.counters.rows_locked.fetch_add(1, Ordering::Relaxed);
                }
                self.held.insert(lk, mode);
                Ok(())
            }
            None => {
                let name = inner.tables[table].schema.name.clone();
                Err(self.retryable(format!("lock wait timeout on {name} {key:?}")))
            }
        }
    }

    /// Binds positional values to the statement's parameters, then executes.
    pub fn execute_with(&mut self, stmt: &Statement, bindings: &[Value]) -> Result<ResultSet, EngineError> {
        let bound = stmt.bind_positional(bindings)?;
        self.execute(&bound)
    }

    /// Executes each statement in order; the first error stops the batch.
    pub fn execute_batch(&mut self, stmts: &[Statement]) -> Result<Vec<ResultSet>, EngineError> {
        stmts.iter().map(|s| self.execute(s)).collect()
    }

    pub fn execute(&mut self, stmt: &Statement) -> Result<ResultSet, EngineError> {
        self.ensure_active()?;
        if !stmt.is_bound() {
            return Err(EngineError::Statement(format!("unbound parameters: {}", stmt.params().join(", "))));
        }
        let engine = self.engine.clone();
        let inner = &engine.inner;
        let tid = engine.table_id(&stmt.table)?;
        if engine.take_fault() {
            return Err(self.retryable("injected fault".into()));
        }
        let cost = inner.config.statement_cost;
        if !cost.is_zero() {
            let start = Instant::now();
            while start.elapsed() < cost {
                std::hint::spin_loop();
            }
        }
        inner.counters.statements.fetch_add(1, Ordering::Relaxed);
        let kind = match stmt.kind {
            StatementKind::Select => 0,
            StatementKind::Insert => 1,
            StatementKind::Update => 2,
            StatementKind::Delete => 3,
        };
        inner.tables[tid].counters[kind].fetch_add(1, Ordering::Relaxed);
        let mark = self.undo.len();
        let result = match stmt.kind {
            StatementKind::Select => self.select(tid, stmt),
            StatementKind::Insert => self.insert(tid, stmt),
            StatementKind::Update => self.update(tid, stmt),
            StatementKind::Delete => self.delete(tid, stmt),
        };
        if let Err(e) = &result {
            if !e.is_retryable() && self.state == TxnState::Active {
                // Statement-level atomicity: undo partial effects, keep the transaction.
                self.rollback_to(mark);
            }
        }
        result
    }

    /// Locks every candidate row in key order and returns the keys of the live
    /// rows satisfying the predicate.
    fn matching(&mut self, tid: usize, pred: Option<&Predicate>, mode: LockMode) -> Result<Vec<Vec<Value>>, EngineError> {
        let engine = self.engine.clone();
        let t = &engine.inner.tables[tid];
        let pk: Vec<(&str, ColumnType)> = t.pk.iter().map(|&i| (t.schema.columns[i].name.as_str(), t.types[i])).collect();
        // Point-only plans over typed key literals need no per-row recheck.
        let mut exact = false;
        let candidates: BTreeSet<Vec<Value>> = match plan_access(pred, &pk) {
            Access::Scan => t.rows.read().keys().cloned().collect(),
            Access::Keys { points, prefixes } => {
                exact = prefixes.is_empty() && pred.is_some_and(|p| key_exact(p, &pk));
                let mut set: BTreeSet<Vec<Value>> = points.into_iter().collect();
                if !prefixes.is_empty() {
                    let rows = t.rows.read();
                    for p in &prefixes {
                        for k in rows.range(p.clone()..).map(|(k, _)| k).take_while(|k| k.starts_with(p)) {
                            set.insert(k.clone());
                        }
                    }
                }
                set
            }
        };
        let mut out = Vec::new();
        for key in candidates {
            self.lock(tid, &key, mode)?;
            let rows = t.rows.read();
            let Some(row) = rows.get(&key).filter(|r| !r.deleted) else { continue };
            let hit = match pred {
                None => true,
                Some(_) if exact => true,
                Some(p) => p.matches(&RowRef { table: t, values: &row.values })?,
            };
            if hit {
                out.push(key);
            }
        }
        Ok(out)
    }

    fn select(&mut self, tid: usize, stmt: &Statement) -> Result<ResultSet, EngineError> {
        let mode = if stmt.for_update { LockMode::Exclusive } else { LockMode::Shared };
        let keys = self.matching(tid, stmt.predicate.as_ref(), mode)?;
        let engine = self.engine.clone();
        let t = &engine.inner.tables[tid];
        let mut rs = ResultSet::new(stmt.projection.iter().map(|p| p.output_name()).collect());
        let rows = t.rows.read();
        let live = keys.iter().map(|k| &rows[k].values);
        if !stmt.is_aggregate() {
            let cols: Vec<usize> = stmt
                .projection
                .iter()
                .map(|p| match &p.item {
                    ProjItem::Column(c) => t.column(c),
                    ProjItem::Sum(_) => unreachable!("non-aggregate projection"),
                })
                .collect::<Result<_, _>>()?;
            for values in live {
                rs.rows.push(cols.iter().map(|&c| values[c].clone()).collect());
            }
            return Ok(rs);
        }
        let group_cols: Vec<usize> = stmt.group_by.iter().map(|c| t.column(c)).collect::<Result<_, _>>()?;
        let mut groups: BTreeMap<Vec<Value>, Vec<Value>> = BTreeMap::new();
        for values in live {
            let row = RowRef { table: t, values };
            let gk: Vec<Value> = group_cols.iter().map(|&c| values[c].clone()).collect();
            let fresh = !groups.contains_key(&gk);
            let acc = groups.entry(gk).or_insert_with(|| vec![Value::Null; stmt.projection.len()]);
            for (slot, p) in acc.iter_mut().zip(&stmt.projection) {
                match &p.item {
                    ProjItem::Column(c) => {
                        if fresh {
                            *slot = values[t.column(c)?].clone();
                        }
                    }
                    ProjItem::Sum(e) => {
                        let v = e.eval(&row)?;
                        if !v.is_null() {
                            *slot = if slot.is_null() { v } else { add_values(slot, &v)? };
                        }
                    }
                }
            }
        }
        if groups.is_empty() && stmt.group_by.is_empty() {
            rs.rows.push(vec![Value::Null; stmt.projection.len()]);
        }
        rs.rows.extend(groups.into_values());
        Ok(rs)
    }

    fn insert(&mut self, tid: usize, stmt: &Statement) -> Result<ResultSet, EngineError> {
        let engine = self.engine.clone();
        let t = &engine.inner.tables[tid];
        let cols: Vec<usize> = stmt.columns.iter().map(|c| t.column(c)).collect::<Result<_, _>>()?;
        let empty: BTreeMap<String, Value> = BTreeMap::new();
        let mut n = 0;
        for cells in &stmt.rows {
            let mut values = vec![Value::Null; t.types.len()];
            for (&c, op) in cols.iter().zip(cells) {
                values[c] = op.eval(&empty)?;
            }
            let values = t.conform(values)?;
            let key = t.key_of(&values);
            self.lock(tid, &key, LockMode::Exclusive)?;
            let mut rows = t.rows.write();
            let before = rows.get(&key).cloned();
            if before.as_ref().is_some_and(|r| !r.deleted) {
                return Err(EngineError::ConstraintViolation(format!("duplicate key {key:?} in {}", t.schema.name)));
            }
            rows.insert(key.clone(), Row { values, deleted: false });
            drop(rows);
            self.undo.push(Undo { table: tid, key, before });
            n += 1;
        }
        Ok(ResultSet::affected(n))
    }

    fn update(&mut self, tid: usize, stmt: &Statement) -> Result<ResultSet, EngineError> {
        let keys = self.matching(tid, stmt.predicate.as_ref(), LockMode::Exclusive)?;
        let engine = self.engine.clone();
        let t = &engine.inner.tables[tid];
        let plan: Vec<(usize, Compiled<'_>)> = stmt
            .assignments
            .iter()
            .map(|a| Ok((t.column(&a.column)?, Compiled::new(&a.expr, t))))
            .collect::<Result<_, EngineError>>()?;
        if plan.iter().any(|(c, _)| t.pk.contains(c)) {
            return Err(EngineError::Unsupported("updating primary-key columns".into()));
        }
        let mut rows = t.rows.write();
        for key in &keys {
            let row = rows.get_mut(key).expect("locked live row");
            let view = RowRef { table: t, values: &row.values };
            let mut fresh = Vec::with_capacity(plan.len());
            for (c, expr) in &plan {
                let v = expr.eval(&view)?;
                let v = v.coerce(t.types[*c]).ok_or_else(|| {
                    EngineError::TypeMismatch(format!("{} value {} for column {}", v.type_name(), v, t.schema.columns[*c].name))
                })?;
                fresh.push((*c, v));
            }
            self.undo.push(Undo { table: tid, key: key.clone(), before: Some(row.clone()) });
            for (c, v) in fresh {
                row.values[c] = v;
            }
        }
        Ok(ResultSet::affected(keys.len() as u64))
    }

    fn delete(&mut self, tid: usize, stmt: &Statement) -> Result<ResultSet, EngineError> {
        let keys = self.matching(tid, stmt.predicate.as_ref(), LockMode::Exclusive)?;
        let engine = self.engine.clone();
        let t = &engine.inner.tables[tid];
        let mut rows = t.rows.write();
        for key in &keys {
            let row = rows.get_mut(key).expect("locked live row");
            self.undo.push(Undo { table: tid, key: key.clone(), before: Some(row.clone()) });
            row.deleted = true;
        }
        Ok(ResultSet::affected(keys.len() as u64))
    }
}
