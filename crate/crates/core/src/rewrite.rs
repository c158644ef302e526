//! Merging batches of same-template statement instances.
//!
//! All functions take bound instances (no parameter slots) in batch arrival
//! order. Equality-keyed predicates merge into `IN`/tuple `IN`; anything else
//! falls back to `OR`. Rows of a merged select are attributed back to
//! invocations through a [`DispatchMap`].

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};

use crate::error::{MergeError, ModelError};
use crate::expr::{add_values, negate, Assignment, Expr, Operand, Predicate, Projection};
use crate::render::{render, Dialect};
use crate::result::ResultSet;
use crate::statement::{Statement, StatementKind};
use crate::template::TransactionTemplate;
use crate::value::Value;

/// How rows of a merged statement are attributed to invocations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DispatchMap {
    /// Rows carry the key columns; each key maps to the invocations that
    /// asked for it.
    ByKey {
        key_columns: Vec<String>,
        routes: Vec<(Vec<Value>, Vec<usize>)>,
        /// Result columns each invocation receives (indices into the merged result).
        keep: Vec<usize>,
    },
    /// Each row goes to every invocation whose original predicate it satisfies.
    ByPredicate { predicates: Vec<Predicate>, keep: Vec<usize> },
    /// Every invocation receives the full result.
    Fanout { count: usize },
    /// Statement produces nothing visible to clients.
    Silent,
}

impl DispatchMap {
    /// Invocation indices that receive rows through this map.
    pub fn invocations(&self) -> BTreeSet<usize> {
        match self {
            DispatchMap::ByKey { routes, .. } => routes.iter().flat_map(|(_, inv)| inv.iter().copied()).collect(),
            DispatchMap::ByPredicate { predicates, .. } => (0..predicates.len()).collect(),
            DispatchMap::Fanout { count } => (0..*count).collect(),
            DispatchMap::Silent => BTreeSet::new(),
        }
    }
}

/// Splits a merged result into per-invocation results, stripping columns
/// added by the rewriter.
pub fn dispatch_results(result: &ResultSet, map: &DispatchMap, invocations: usize) -> Result<Vec<ResultSet>, MergeError> {
    let project = |keep: &[usize]| -> ResultSet {
        ResultSet::new(keep.iter().map(|&i| result.columns[i].clone()).collect())
    };
    match map {
        DispatchMap::Fanout { .. } | DispatchMap::Silent => Ok(vec![result.clone(); invocations]),
        DispatchMap::ByKey { key_columns, routes, keep } => {
            let idx: Vec<usize> = key_columns
                .iter()
                .map(|c| result.column_index(c).ok_or_else(|| MergeError::OrphanRow(format!("result lacks key column {c}"))))
                .collect::<Result<_, _>>()?;
            let mut out = vec![project(keep); invocations];
            for row in &result.rows {
                let route = routes
                    .iter()
                    .find(|(key, _)| key.iter().zip(&idx).all(|(k, &i)| k.sql_eq(&row[i])))
                    .ok_or_else(|| MergeError::OrphanRow(format!("{:?}", idx.iter().map(|&i| &row[i]).collect::<Vec<_>>())))?;
                for &inv in &route.1 {
                    out[inv].rows.push(keep.iter().map(|&i| row[i].clone()).collect());
                }
            }
            Ok(out)
        }
        DispatchMap::ByPredicate { predicates, keep } => {
            let mut out = vec![project(keep); invocations];
            for r in 0..result.rows.len() {
                let view = result.row(r);
                let mut matched = false;
                for (inv, p) in predicates.iter().enumerate() {
                    if p.matches(&view)? {
                        out[inv].rows.push(keep.iter().map(|&i| result.rows[r][i].clone()).collect());
                        matched = true;
                    }
                }
                if !matched {
                    return Err(MergeError::OrphanRow(format!("{:?}", result.rows[r])));
                }
            }
            Ok(out)
        }
    }
}

/// Deliberate rewriter faults, used to check that the oracle catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Replace the `ELSE column` fallback of merged updates with `ELSE NULL`.
    DropElse,
}

/// Equality-keyed view of a batch of predicates.
struct KeyShape {
    /// Predicate columns in source order with the shared value, if constant.
    terms: Vec<(String, Option<Value>)>,
    /// Per-instance values of the varying columns.
    keys: Vec<Vec<Value>>,
}

impl KeyShape {
    fn varying(&self) -> Vec<String> {
        self.terms.iter().filter(|(_, v)| v.is_none()).map(|(c, _)| c.clone()).collect()
    }

    fn distinct_keys(&self) -> Vec<(Vec<Value>, Vec<usize>)> {
        let mut out: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
        let mut seen: HashMap<&[Value], usize> = HashMap::with_capacity(self.keys.len());
        for (i, k) in self.keys.iter().enumerate() {
            match seen.get(k.as_slice()) {
                Some(&j) => out[j].1.push(i),
                None => {
                    seen.insert(k, out.len());
                    out.push((k.clone(), vec![i]));
                }
            }
        }
        out
    }

    /// Constant terms as equalities plus one IN/tuple IN over the varying
    /// columns, placed where the first varying column appeared.
    fn predicate(&self) -> Predicate {
        let varying = self.varying();
        let keys: Vec<Vec<Value>> = self.distinct_keys().into_iter().map(|(k, _)| k).collect();
        let mut parts = Vec::new();
        let mut placed = false;
        for (c, v) in &self.terms {
            match v {
                Some(v) => parts.push(Predicate::Eq(c.clone(), Operand::Value(v.clone()))),
                None if !placed => {
                    placed = true;
                    parts.push(if varying.len() == 1 {
                        Predicate::In(c.clone(), keys.iter().map(|k| Operand::Value(k[0].clone())).collect())
                    } else {
                        Predicate::TupleIn(
                            varying.clone(),
                            keys.iter().map(|k| k.iter().cloned().map(Operand::Value).collect()).collect(),
                        )
                    });
                }
                None => {}
            }
        }
        if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            Predicate::And(parts)
        }
    }

    /// Equality on the varying columns for instance `i`.
    fn branch(&self, i: usize) -> Predicate {
        let mut eqs: Vec<Predicate> = self
            .terms
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(c, _)| c.clone())
            .zip(&self.keys[i])
            .map(|(c, v)| Predicate::Eq(c, Operand::Value(v.clone())))
            .collect();
        if eqs.len() == 1 {
            eqs.pop().expect("one")
        } else {
            Predicate::And(eqs)
        }
    }
}

fn key_shape(stmts: &[Statement], forced: &[String]) -> Option<KeyShape> {
    key_shape_of(stmts.iter(), forced)
}

fn key_shape_of<'a>(stmts: impl Iterator<Item = &'a Statement>, forced: &[String]) -> Option<KeyShape> {
    let all_terms: Vec<Vec<(&str, &Value)>> = stmts
        .map(|s| s.predicate.as_ref().and_then(Predicate::equality_terms))
        .collect::<Option<_>>()?;
    let first = &all_terms[0];
    if all_terms.iter().any(|t| t.len() != first.len() || t.iter().zip(first).any(|(a, b)| a.0 != b.0)) {
        return None;
    }
    let terms: Vec<(String, Option<Value>)> = first
        .iter()
        .enumerate()
        .map(|(j, (c, v))| {
            let constant = !forced.iter().any(|f| f == c) && all_terms.iter().all(|t| t[j].1 == *v);
            (c.to_string(), constant.then(|| (*v).clone()))
        })
        .collect();
    let keys = all_terms
        .iter()
        .map(|t| t.iter().zip(&terms).filter(|(_, (_, v))| v.is_none()).map(|((_, v), _)| (*v).clone()).collect())
        .collect();
    Some(KeyShape { terms, keys })
}

fn same<T: PartialEq>(stmts: &[Statement], what: &str, f: impl Fn(&Statement) -> T) -> Result<(), MergeError> {
    let first = f(&stmts[0]);
    if stmts.iter().any(|s| f(s) != first) {
        return Err(MergeError::ShapeMismatch(format!("instances differ in {what}")));
    }
    Ok(())
}

fn check_kind(stmts: &[Statement], kind: StatementKind) -> Result<(), MergeError> {
    if stmts.is_empty() {
        return Err(MergeError::EmptyBatch);
    }
    if let Some(s) = stmts.iter().find(|s| s.kind != kind) {
        return Err(MergeError::ShapeMismatch(format!("expected {}, got {}", kind.as_str(), s.kind.as_str())));
    }
    same(stmts, "table", |s| s.table.clone())
}

fn or_of(stmts: &[Statement]) -> Result<Predicate, MergeError> {
    let mut parts: Vec<Predicate> = Vec::new();
    for s in stmts {
        let p = s
            .predicate
            .clone()
            .ok_or_else(|| MergeError::Unsupported("cannot OR-merge an unfiltered statement".into()))?;
        if !parts.contains(&p) {
            parts.push(p);
        }
    }
    Ok(if parts.len() == 1 { parts.pop().expect("one") } else { Predicate::Or(parts) })
}

/// Batch rewriter. The default instance applies the merge rules as stated;
/// `key` forces columns into the IN list even when constant across the batch.
#[derive(Debug, Clone, Default)]
pub struct Rewriter {
    key: Vec<String>,
    mutation: Mutation,
}

impl Rewriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(mut self, columns: &[&str]) -> Self {
        self.key = columns.iter().map(|c| c.to_string()).collect();
        self
    }

    pub fn mutation(mut self, m: Mutation) -> Self {
        self.mutation = m;
        self
    }

    pub fn merge_selects(&self, stmts: &[Statement]) -> Result<(Statement, DispatchMap), MergeError> {
        check_kind(stmts, StatementKind::Select)?;
        same(stmts, "projection", |s| s.projection.clone())?;
        same(stmts, "grouping", |s| s.group_by.clone())?;
        same(stmts, "locking", |s| s.for_update)?;
        let base = &stmts[0];
        let n = stmts.len();
        if n == 1 || stmts.iter().all(|s| s == base) {
            return Ok((base.clone(), DispatchMap::Fanout { count: n }));
        }
        let mut merged = base.clone();
        if let Some(shape) = key_shape(stmts, &self.key) {
            let varying = shape.varying();
            if varying.is_empty() {
                return Ok((base.clone(), DispatchMap::Fanout { count: n }));
            }
            let added: Vec<String> = varying
                .iter()
                .filter(|c| !base.projection.iter().any(|p| p.alias.is_none() && p.source_column() == Some(c.as_str())))
                .cloned()
                .collect();
            merged.projection = added.iter().map(Projection::column).chain(base.projection.iter().cloned()).collect();
            if base.is_aggregate() {
                let mut group: Vec<String> = varying.clone();
                group.extend(base.group_by.iter().filter(|g| !varying.contains(g)).cloned());
                merged.group_by = group;
            }
            merged.predicate = Some(shape.predicate());
            let keep = (added.len()..merged.projection.len()).collect();
            let merged = merged.derive_access();
            return Ok((merged, DispatchMap::ByKey { key_columns: varying, routes: shape.distinct_keys(), keep }));
        }
        if base.is_aggregate() {
            return Err(MergeError::Unsupported("aggregate selects need equality-keyed predicates".into()));
        }
        let mut needed = BTreeSet::new();
        for s in stmts {
            if let Some(p) = &s.predicate {
                p.collect_columns(&mut needed);
            }
        }
        let added: Vec<String> = needed
            .into_iter()
            .filter(|c| !base.projection.iter().any(|p| p.alias.is_none() && p.source_column() == Some(c.as_str())))
            .collect();
        merged.projection = added.iter().map(Projection::column).chain(base.projection.iter().cloned()).collect();
        merged.predicate = Some(or_of(stmts)?);
        let keep = (added.len()..merged.projection.len()).collect();
        let predicates = stmts.iter().map(|s| s.predicate.clone().expect("checked by or_of")).collect();
        Ok((merged.derive_access(), DispatchMap::ByPredicate { predicates, keep }))
    }

    pub fn merge_deletes(&self, stmts: &[Statement]) -> Result<Statement, MergeError> {
        check_kind(stmts, StatementKind::Delete)?;
        let mut merged = stmts[0].clone();
        if stmts.len() == 1 {
            return Ok(merged);
        }
        merged.predicate = Some(match key_shape(stmts, &self.key) {
            Some(shape) if !shape.varying().is_empty() => shape.predicate(),
            Some(_) => stmts[0].predicate.clone().expect("keyed"),
            None => or_of(stmts)?,
        });
        let writes = merged.writes.clone();
        let mut merged = merged.derive_access();
        merged.writes.extend(writes);
        Ok(merged)
    }

    /// Merges updates on distinct keys into one statement with `CASE WHEN`
    /// assignments. Instances sharing a key are first collapsed with
    /// [`aggregate_delta_updates`]; if that is impossible the batch is
    /// rejected with `KeyCollision`.
    pub fn merge_updates(&self, stmts: &[Statement]) -> Result<Statement, MergeError> {
        check_kind(stmts, StatementKind::Update)?;
        if stmts.len() == 1 {
            return Ok(stmts[0].clone());
        }
        let in_order = |s: &Statement| s.assignments.iter().map(|a| &a.column).eq(stmts[0].assignments.iter().map(|a| &a.column));
        if !stmts.iter().all(in_order) {
            let columns = |s: &Statement| s.assignments.iter().map(|a| a.column.clone()).collect::<BTreeSet<_>>();
            same(stmts, "assigned columns", columns)?;
        }
        let shape = key_shape(stmts, &self.key)
            .ok_or_else(|| MergeError::ShapeMismatch("update predicates are not key equalities".into()))?;

        // Collapse same-key instances.
        let mut per_key: Vec<Cow<'_, Statement>> = Vec::new();
        for (key, members) in shape.distinct_keys() {
            if members.len() == 1 {
                per_key.push(Cow::Borrowed(&stmts[members[0]]));
                continue;
            }
            let group: Vec<&Statement> = members.iter().map(|&i| &stmts[i]).collect();
            match aggregate_deltas(&group) {
                Ok(s) => per_key.push(Cow::Owned(s)),
                Err(MergeError::NotCommutative(_)) | Err(MergeError::ShapeMismatch(_)) => {
                    return Err(MergeError::KeyCollision(format!("{key:?}")));
                }
                Err(e) => return Err(e),
            }
        }
        if per_key.len() == 1 {
            return Ok(per_key.pop().expect("one").into_owned());
        }
        let shape = key_shape_of(per_key.iter().map(|s| &**s), &self.key).expect("subset of a keyed batch");
        let base = &per_key[0];
        let mut assignments = Vec::with_capacity(base.assignments.len());
        for a in &base.assignments {
            let exprs: Vec<&Expr> = per_key.iter().map(|s| s.assignment(&a.column).expect("same columns")).collect();
            if exprs[0].is_constant() && exprs.iter().all(|e| *e == exprs[0]) {
                assignments.push(a.clone());
                continue;
            }
            let branches: Vec<(Predicate, Expr)> = exprs
                .iter()
                .enumerate()
                .filter(|(_, e)| !Assignment::new(a.column.clone(), (**e).clone()).is_noop())
                .map(|(i, e)| (shape.branch(i), (*e).clone()))
                .collect();
            if branches.is_empty() {
                continue;
            }
            let otherwise = match self.mutation {
                Mutation::None => Expr::Column(a.column.clone()),
                Mutation::DropElse => Expr::Value(Value::Null),
            };
            assignments.push(Assignment::new(a.column.clone(), Expr::Case { branches, otherwise: Box::new(otherwise) }));
        }
        if assignments.is_empty() {
            // Every instance was a no-op; keep one harmless assignment.
            assignments.push(Assignment::new(base.assignments[0].column.clone(), Expr::Column(base.assignments[0].column.clone())));
        }
        let mut merged = Statement::clone(base);
        merged.assignments = assignments;
        merged.predicate = Some(shape.predicate());
        Ok(merged.derive_access())
    }
}

pub fn merge_selects(stmts: &[Statement]) -> Result<(Statement, DispatchMap), MergeError> {
    Rewriter::new().merge_selects(stmts)
}

pub fn merge_updates(stmts: &[Statement]) -> Result<Statement, MergeError> {
    Rewriter::new().merge_updates(stmts)
}

pub fn merge_deletes(stmts: &[Statement]) -> Result<Statement, MergeError> {
    Rewriter::new().merge_deletes(stmts)
}

/// Concatenates the rows of same-shaped inserts in batch order.
pub fn merge_inserts(stmts: &[Statement]) -> Result<Statement, MergeError> {
    check_kind(stmts, StatementKind::Insert)?;
    same(stmts, "column list", |s| s.columns.clone())?;
    let mut merged = stmts[0].clone();
    merged.rows = stmts.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    Ok(merged)
}

/// Collapses updates of one key whose assignments are all `col = col ± v`
/// into a single update with summed deltas.
pub fn aggregate_delta_updates(stmts: &[Statement]) -> Result<Statement, MergeError> {
    aggregate_deltas(&stmts.iter().collect::<Vec<_>>())
}

fn aggregate_deltas(stmts: &[&Statement]) -> Result<Statement, MergeError> {
    let first = stmts.first().ok_or(MergeError::EmptyBatch)?;
    if let Some(s) = stmts.iter().find(|s| s.kind != StatementKind::Update) {
        return Err(MergeError::ShapeMismatch(format!("expected {}, got {}", StatementKind::Update.as_str(), s.kind.as_str())));
    }
    if stmts.iter().any(|s| s.table != first.table) {
        return Err(MergeError::ShapeMismatch("instances differ in table".into()));
    }
    if stmts.iter().any(|s| s.predicate != first.predicate) {
        return Err(MergeError::ShapeMismatch("instances differ in predicate".into()));
    }
    fn columns(s: &Statement) -> BTreeSet<&str> {
        s.assignments.iter().map(|a| a.column.as_str()).collect()
    }
    let first_columns = columns(first);
    if stmts.iter().any(|s| columns(s) != first_columns) {
        return Err(MergeError::ShapeMismatch("instances differ in assigned columns".into()));
    }
    for s in stmts {
        if let Some(a) = s.assignments.iter().find(|a| a.delta().is_none()) {
            return Err(MergeError::NotCommutative(format!("{} = {}", a.column, crate::render::render_expr_plain(&a.expr))));
        }
    }
    let mut merged = Statement::clone(first);
    if stmts.len() == 1 {
        return Ok(merged);
    }
    for a in &mut merged.assignments {
        let mut total = Value::Int(0);
        for s in stmts {
            let d = s.assignments.iter().find(|x| x.column == a.column).and_then(Assignment::delta).expect("checked");
            total = add_values(&total, &d)?;
        }
        let col = Expr::Column(a.column.clone());
        a.expr = if matches!(a.expr, Expr::Sub(..)) {
            Expr::sub(col, Expr::Value(negate(&total)?))
        } else {
            Expr::add(col, Expr::Value(total))
        };
    }
    Ok(merged)
}

/// Keeps one copy of each distinct statement; `fanout[k]` lists the
/// invocations served by statement `k`.
pub fn dedupe_reads(stmts: &[Statement]) -> (Vec<Statement>, Vec<Vec<usize>>) {
    let mut unique: Vec<Statement> = Vec::new();
    let mut fanout: Vec<Vec<usize>> = Vec::new();
    for (i, s) in stmts.iter().enumerate() {
        let reusable = s.kind == StatementKind::Select;
        match unique.iter().position(|u| reusable && u == s) {
            Some(k) => fanout[k].push(i),
            None => {
                unique.push(s.clone());
                fanout.push(vec![i]);
            }
        }
    }
    (unique, fanout)
}

/// Sub-batches in which every key occurs at most once; the j-th occurrence
/// of a key lands in sub-batch j, so per-key order is preserved.
pub fn split_by_key(keys: &[Vec<Value>]) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut seen: Vec<(&Vec<Value>, usize)> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        let round = match seen.iter_mut().find(|(key, _)| *key == k) {
            Some((_, count)) => {
                *count += 1;
                *count - 1
            }
            None => {
                seen.push((k, 1));
                0
            }
        };
        if batches.len() <= round {
            batches.push(Vec::new());
        }
        batches[round].push(i);
    }
    batches
}

/// Consecutive identifiers handed to the members of a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceAllocation {
    pub base: i64,
    pub count: usize,
    pub values: Vec<i64>,
}

impl SequenceAllocation {
    /// Increment applied to the counter column.
    pub fn delta(&self) -> i64 {
        self.count as i64
    }

    pub fn next(&self) -> i64 {
        self.base + self.count as i64
    }
}

/// Member `k` of the batch receives `current + k`; the counter advances by `n`.
pub fn allocate_sequence(current: i64, n: usize) -> SequenceAllocation {
    assert!(n >= 1, "sequence allocation needs at least one member");
    SequenceAllocation { base: current, count: n, values: (0..n as i64).map(|k| current + k).collect() }
}

/// One merged statement and how its results flow back.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStatement {
    /// 1-based index of the source template statement.
    pub source: usize,
    pub statement: Statement,
    pub dispatch: DispatchMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedPlan {
    pub transaction: String,
    pub batch_size: usize,
    pub statements: Vec<PlannedStatement>,
    /// Per-invocation values produced by the rewrite itself (sequence ids).
    pub echoes: Vec<(String, Vec<Value>)>,
}

impl MergedPlan {
    /// Statements rendered one per line, each terminated by `;`.
    pub fn render(&self, dialect: Dialect) -> Result<String, ModelError> {
        let mut out = String::new();
        for p in &self.statements {
            if !p.statement.is_bound() {
                return Err(ModelError::Unbound(p.statement.params().join(", ")));
            }
            out.push_str(&render(&p.statement, dialect));
            out.push_str(";\n");
        }
        Ok(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Merge(#[from] MergeError),
}

/// Mechanically merges every statement of `template` across a batch of
/// invocations. `lookup(k, name)` supplies parameter `name` of invocation `k`.
pub fn plan_batch(
    template: &TransactionTemplate,
    batch: usize,
    lookup: &dyn Fn(usize, &str) -> Option<Value>,
    rewriter: &Rewriter,
) -> Result<MergedPlan, PlanError> {
    if batch == 0 {
        return Err(MergeError::EmptyBatch.into());
    }
    let mut statements = Vec::new();
    for (i, stmt) in template.statements.iter().enumerate() {
        let bound: Vec<Statement> =
            (0..batch).map(|k| stmt.bind(&|name: &str| lookup(k, name))).collect::<Result<_, _>>()?;
        let source = i + 1;
        match stmt.kind {
            StatementKind::Select => {
                let (statement, dispatch) = rewriter.merge_selects(&bound)?;
                statements.push(PlannedStatement { source, statement, dispatch });
            }
            StatementKind::Insert => {
                statements.push(PlannedStatement { source, statement: merge_inserts(&bound)?, dispatch: DispatchMap::Silent });
            }
            StatementKind::Delete => {
                statements.push(PlannedStatement { source, statement: rewriter.merge_deletes(&bound)?, dispatch: DispatchMap::Silent });
            }
            StatementKind::Update => match rewriter.merge_updates(&bound) {
                Ok(statement) => statements.push(PlannedStatement { source, statement, dispatch: DispatchMap::Silent }),
                Err(MergeError::KeyCollision(_)) => {
                    // Execute colliding instances in sequential sub-batches.
                    let keys: Vec<Vec<Value>> = bound
                        .iter()
                        .map(|s| {
                            s.predicate
                                .as_ref()
                                .and_then(Predicate::equality_terms)
                                .map(|t| t.into_iter().map(|(_, v)| v.clone()).collect())
                                .unwrap_or_default()
                        })
                        .collect();
                    for sub in split_by_key(&keys) {
                        let part: Vec<Statement> = sub.iter().map(|&k| bound[k].clone()).collect();
                        statements.push(PlannedStatement {
                            source,
                            statement: rewriter.merge_updates(&part)?,
                            dispatch: DispatchMap::Silent,
                        });
                    }
                }
                Err(e) => return Err(e.into()),
            },
        }
    }
    Ok(MergedPlan { transaction: template.name.clone(), batch_size: batch, statements, echoes: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render;

    fn sel(id: i64) -> Statement {
        Statement::select_columns("t", &["value"]).filter(Predicate::eq("id", Value::Int(id)))
    }

    fn upd(id: i64, v: i64) -> Statement {
        Statement::update("t", vec![Assignment::new("value", Expr::value(v))]).filter(Predicate::eq("id", Value::Int(id)))
    }

    fn sql(s: &Statement) -> String {
        render(s, Dialect::MySql)
    }

    #[test]
    fn selects_merge_into_in_list_with_key_prepended() {
        let (m, map) = merge_selects(&[sel(3), sel(7)]).unwrap();
        assert_eq!(sql(&m), "SELECT id, value FROM t WHERE id IN (3, 7)");
        let rs = ResultSet {
            columns: vec!["id".into(), "value".into()],
            rows: vec![vec![Value::Int(7), Value::Int(70)], vec![Value::Int(3), Value::Int(30)]],
            affected: 0,
        };
        let out = dispatch_results(&rs, &map, 2).unwrap();
        assert_eq!(out[0].columns, vec!["value".to_string()]);
        assert_eq!(out[0].rows, vec![vec![Value::Int(30)]]);
        assert_eq!(out[1].rows, vec![vec![Value::Int(70)]]);
    }

    #[test]
    fn orphan_rows_are_reported() {
        let (_, map) = merge_selects(&[sel(3), sel(7)]).unwrap();
        let rs = ResultSet {
            columns: vec!["id".into(), "value".into()],
            rows: vec![vec![Value::Int(5), Value::Int(1)]],
            affected: 0,
        };
        assert!(matches!(dispatch_results(&rs, &map, 2), Err(MergeError::OrphanRow(_))));
    }

    #[test]
    fn duplicate_keys_share_rows() {
        let (m, map) = merge_selects(&[sel(3), sel(7), sel(3)]).unwrap();
        assert_eq!(sql(&m), "SELECT id, value FROM t WHERE id IN (3, 7)");
        assert_eq!(map.invocations(), [0, 1, 2].into_iter().collect());
    }

    #[test]
    fn mixed_predicates_fall_back_to_or() {
        let other = Statement::select_columns("t", &["value"]).filter(Predicate::eq("value", Value::Int(9)));
        let (m, map) = merge_selects(&[sel(3), other]).unwrap();
        assert_eq!(sql(&m), "SELECT id, value FROM t WHERE id = 3 OR value = 9");
        let rs = ResultSet {
            columns: vec!["id".into(), "value".into()],
            rows: vec![vec![Value::Int(3), Value::Int(9)], vec![Value::Int(4), Value::Int(9)]],
            affected: 0,
        };
        let out = dispatch_results(&rs, &map, 2).unwrap();
        assert_eq!(out[0].rows.len(), 1);
        assert_eq!(out[1].rows.len(), 2);
    }

    #[test]
    fn aggregate_select_gains_group_by() {
        let s = |o: i64| {
            Statement::select("line_items", vec![Projection::sum(Expr::col("quantity"))])
                .filter(Predicate::eq("order_id", Value::Int(o)))
        };
        let (m, _) = merge_selects(&[s(1), s(2)]).unwrap();
        assert_eq!(sql(&m), "SELECT order_id, SUM(quantity) FROM line_items WHERE order_id IN (1, 2) GROUP BY order_id");
    }

    #[test]
    fn tuple_in_when_several_columns_vary() {
        let s = |w: i64, i: i64| {
            Statement::select_columns("stock", &["s_quantity"])
                .filter(Predicate::And(vec![
                    Predicate::eq("s_w_id", Value::Int(w)),
                    Predicate::eq("s_i_id", Value::Int(i)),
                ]))
                .for_update()
        };
        let (m, _) = merge_selects(&[s(1, 3), s(2, 7)]).unwrap();
        assert_eq!(
            sql(&m),
            "SELECT s_w_id, s_i_id, s_quantity FROM stock WHERE (s_w_id, s_i_id) IN ((1, 3), (2, 7)) FOR UPDATE"
        );
        let (m, _) = merge_selects(&[s(1, 3), s(1, 7)]).unwrap();
        assert_eq!(sql(&m), "SELECT s_i_id, s_quantity FROM stock WHERE s_w_id = 1 AND s_i_id IN (3, 7) FOR UPDATE");
        let (m, _) = Rewriter::new().key(&["s_w_id", "s_i_id"]).merge_selects(&[s(1, 3), s(1, 7)]).unwrap();
        assert!(sql(&m).contains("(s_w_id, s_i_id) IN ((1, 3), (1, 7))"));
    }

    #[test]
    fn updates_become_case_when() {
        let m = merge_updates(&[upd(3, 5), upd(7, 9)]).unwrap();
        assert_eq!(
            sql(&m),
            "UPDATE t SET value = CASE WHEN id = 3 THEN 5 WHEN id = 7 THEN 9 ELSE value END WHERE id IN (3, 7)"
        );
        assert_eq!(merge_updates(&[upd(3, 5)]).unwrap(), upd(3, 5));
    }

    #[test]
    fn same_key_absolute_updates_collide() {
        assert!(matches!(merge_updates(&[upd(3, 5), upd(3, 6)]), Err(MergeError::KeyCollision(_))));
    }

    #[test]
    fn same_key_deltas_are_collapsed() {
        let d = |id: i64, v: i64| Statement::update("t", vec![Assignment::add_value("value", v)]).filter(Predicate::eq("id", Value::Int(id)));
        let m = merge_updates(&[d(3, 1), d(7, 2), d(3, 4)]).unwrap();
        assert_eq!(
            sql(&m),
            "UPDATE t SET value = CASE WHEN id = 3 THEN value + 5 WHEN id = 7 THEN value + 2 ELSE value END WHERE id IN (3, 7)"
        );
    }

    #[test]
    fn identical_constant_assignment_stays_plain() {
        let u = |id: i64| {
            Statement::update(
                "orders",
                vec![Assignment::new("total", Expr::value(id * 10)), Assignment::new("updated_at", Expr::value(Value::Timestamp(5)))],
            )
            .filter(Predicate::eq("id", Value::Int(id)))
        };
        let m = merge_updates(&[u(1), u(2)]).unwrap();
        assert_eq!(
            sql(&m),
            "UPDATE orders SET total = CASE WHEN id = 1 THEN 10 WHEN id = 2 THEN 20 ELSE total END, updated_at = 5 WHERE id IN (1, 2)"
        );
    }

    #[test]
    fn noop_branches_are_omitted_and_else_carries_them() {
        let u = |id: i64, v: i64| Statement::update("t", vec![Assignment::add_value("value", v)]).filter(Predicate::eq("id", Value::Int(id)));
        let m = merge_updates(&[u(1, 0), u(2, 3)]).unwrap();
        assert_eq!(sql(&m), "UPDATE t SET value = CASE WHEN id = 2 THEN value + 3 ELSE value END WHERE id IN (1, 2)");
        let bad = Rewriter::new().mutation(Mutation::DropElse).merge_updates(&[u(1, 0), u(2, 3)]).unwrap();
        assert!(sql(&bad).contains("ELSE NULL END"));
    }

    #[test]
    fn delta_aggregation_is_exact() {
        let p = |amt: &str| {
            Statement::update("warehouse", vec![Assignment::new("w_ytd", Expr::add(Expr::col("w_ytd"), Expr::value(Value::dec(amt))))])
                .filter(Predicate::eq("w_id", Value::Int(1)))
        };
        let m = aggregate_delta_updates(&[p("10.00"), p("15.50")]).unwrap();
        assert_eq!(sql(&m), "UPDATE warehouse SET w_ytd = w_ytd + 25.50 WHERE w_id = 1");
        assert!(matches!(aggregate_delta_updates(&[upd(1, 2), upd(1, 3)]), Err(MergeError::NotCommutative(_))));
    }

    #[test]
    fn inserts_concatenate_and_check_columns() {
        let i = |id: i64| Statement::insert("h", &["id"], vec![vec![Operand::value(id)]]);
        let m = merge_inserts(&[i(1), i(2)]).unwrap();
        assert_eq!(sql(&m), "INSERT INTO h (id) VALUES (1), (2)");
        assert_eq!(merge_inserts(&[i(1)]).unwrap(), i(1));
        let other = Statement::insert("h", &["id", "x"], vec![vec![Operand::value(1), Operand::value(2)]]);
        assert!(matches!(merge_inserts(&[i(1), other]), Err(MergeError::ShapeMismatch(_))));
    }

    #[test]
    fn deletes_use_in_then_or() {
        let d = |id: i64| Statement::delete("t").filter(Predicate::eq("id", Value::Int(id)));
        assert_eq!(sql(&merge_deletes(&[d(4), d(9)]).unwrap()), "DELETE FROM t WHERE id IN (4, 9)");
        let other = Statement::delete("t").filter(Predicate::eq("value", Value::Int(0)));
        assert_eq!(sql(&merge_deletes(&[d(4), other]).unwrap()), "DELETE FROM t WHERE id = 4 OR value = 0");
    }

    #[test]
    fn dedupe_keeps_distinct_reads() {
        let w = |id: i64| Statement::select_columns("warehouse", &["w_tax"]).filter(Predicate::eq("w_id", Value::Int(id)));
        let (u, f) = dedupe_reads(&[w(1), w(1), w(1)]);
        assert_eq!(u.len(), 1);
        assert_eq!(f, vec![vec![0, 1, 2]]);
        let (u, _) = dedupe_reads(&[w(1), w(2)]);
        assert_eq!(u.len(), 2);
    }

    #[test]
    fn sequence_values_are_consecutive_from_current() {
        let a = allocate_sequence(100, 3);
        assert_eq!(a.values, vec![100, 101, 102]);
        assert_eq!(a.delta(), 3);
        assert_eq!(a.next(), 103);
        assert_eq!(allocate_sequence(100, 1).values, vec![100]);
    }

    #[test]
    fn split_preserves_per_key_order() {
        let k = |v: i64| vec![Value::Int(v)];
        assert_eq!(split_by_key(&[k(1), k(2), k(1), k(1), k(3)]), vec![vec![0, 1, 4], vec![2], vec![3]]);
    }
}
