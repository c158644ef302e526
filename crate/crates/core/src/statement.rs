//! Declared SQL statements with explicit access metadata.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::expr::{Assignment, Expr, Lookup, Operand, Predicate, Projection};
use crate::schema::Schema;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatementKind {
    Select,
    Insert,
    Update,
    Delete,
}

impl StatementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatementKind::Select => "select",
            StatementKind::Insert => "insert",
            StatementKind::Update => "update",
            StatementKind::Delete => "delete",
        }
    }
}

/// Read and write column sets of one statement.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccessSets {
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    /// Reads taken under an exclusive lock (`FOR UPDATE`).
    pub locking: bool,
}

impl AccessSets {
    pub fn touched(&self) -> BTreeSet<&str> {
        self.reads.iter().chain(&self.writes).map(String::as_str).collect()
    }
}

/// One statement, either a template (with parameter slots) or a bound
/// instance (literals only).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Statement {
    pub kind: StatementKind,
    pub table: String,
    pub projection: Vec<Projection>,
    pub group_by: Vec<String>,
    pub predicate: Option<Predicate>,
    pub assignments: Vec<Assignment>,
    /// Insert column list.
    pub columns: Vec<String>,
    /// Insert row tuples.
    pub rows: Vec<Vec<Operand>>,
    pub for_update: bool,
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    /// The developer asserts the predicate binds a key that is unique per
    /// concurrent invocation.
    pub distinct_key: bool,
    /// Set on deletes whose write-set was widened to every column of the table.
    pub writes_all_columns: bool,
}

impl Statement {
    fn empty(kind: StatementKind, table: &str) -> Self {
        Statement {
            kind,
            table: table.to_string(),
            projection: Vec::new(),
            group_by: Vec::new(),
            predicate: None,
            assignments: Vec::new(),
            columns: Vec::new(),
            rows: Vec::new(),
            for_update: false,
            reads: BTreeSet::new(),
            writes: BTreeSet::new(),
            distinct_key: false,
            writes_all_columns: false,
        }
    }

    pub fn select(table: &str, projection: Vec<Projection>) -> Self {
        Statement { projection, ..Self::empty(StatementKind::Select, table) }.derive_access()
    }

    pub fn select_columns(table: &str, columns: &[&str]) -> Self {
        Self::select(table, columns.iter().map(|c| Projection::column(*c)).collect())
    }

    pub fn insert(table: &str, columns: &[&str], rows: Vec<Vec<Operand>>) -> Self {
        Statement {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
            ..Self::empty(StatementKind::Insert, table)
        }
        .derive_access()
    }

    pub fn update(table: &str, assignments: Vec<Assignment>) -> Self {
        Statement { assignments, ..Self::empty(StatementKind::Update, table) }.derive_access()
    }

    pub fn delete(table: &str) -> Self {
        Self::empty(StatementKind::Delete, table)
    }

    pub fn filter(mut self, predicate: Predicate) -> Self {
        self.predicate = Some(predicate);
        self.derive_access()
    }

    pub fn group_by(mut self, columns: &[&str]) -> Self {
        self.group_by = columns.iter().map(|c| c.to_string()).collect();
        self.derive_access()
    }

    pub fn for_update(mut self) -> Self {
        self.for_update = true;
        self
    }

    pub fn distinct_key(mut self) -> Self {
        self.distinct_key = true;
        self
    }

    /// Recomputes read/write sets from the referenced columns. Deletes write
    /// their predicate columns until widened by [`Statement::widen_delete`].
    pub fn derive_access(mut self) -> Self {
        let mut reads = BTreeSet::new();
        for p in &self.projection {
            p.collect_columns(&mut reads);
        }
        reads.extend(self.group_by.iter().cloned());
        if let Some(p) = &self.predicate {
            p.collect_columns(&mut reads);
        }
        let mut writes = BTreeSet::new();
        for a in &self.assignments {
            a.expr.collect_columns(&mut reads);
            writes.insert(a.column.clone());
        }
        for row in &self.rows {
            for op in row {
                if let Operand::Column(c) = op {
                    reads.insert(c.clone());
                }
            }
        }
        writes.extend(self.columns.iter().cloned());
        if self.kind == StatementKind::Delete {
            writes.extend(reads.iter().cloned());
        }
        self.reads = reads;
        self.writes = writes;
        self
    }

    /// Deletes remove whole rows: treat them as writing every column.
    pub fn widen_delete(&mut self, schema: &Schema) -> Result<(), ModelError> {
        if self.kind != StatementKind::Delete {
            return Ok(());
        }
        let table = schema.require_table(&self.table)?;
        self.writes.extend(table.columns.iter().map(|c| c.name.clone()));
        self.writes_all_columns = true;
        Ok(())
    }

    pub fn access_sets(&self) -> AccessSets {
        AccessSets {
            reads: self.reads.clone(),
            writes: self.writes.clone(),
            locking: self.kind == StatementKind::Select && self.for_update,
        }
    }

    /// Columns read by predicate, projection, grouping and expressions.
    pub fn referenced_reads(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for p in &self.projection {
            p.collect_columns(&mut out);
        }
        out.extend(self.group_by.iter().cloned());
        if let Some(p) = &self.predicate {
            p.collect_columns(&mut out);
        }
        for a in &self.assignments {
            a.expr.collect_columns(&mut out);
        }
        for row in &self.rows {
            for op in row {
                if let Operand::Column(c) = op {
                    out.insert(c.clone());
                }
            }
        }
        out
    }

    /// Columns assigned or inserted.
    pub fn referenced_writes(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.assignments.iter().map(|a| a.column.clone()).collect();
        out.extend(self.columns.iter().cloned());
        out
    }

    pub fn validate(&self, schema: Option<&Schema>) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Validation(format!("{} on {}: {msg}", self.kind.as_str(), self.table)));
        match self.kind {
            StatementKind::Select => {
                if !self.writes.is_empty() {
                    return fail("select declares writes".into());
                }
                if self.projection.is_empty() {
                    return fail("empty projection".into());
                }
                let aggregated = self.projection.iter().any(Projection::is_aggregate);
                if !self.group_by.is_empty() || aggregated {
                    for p in &self.projection {
                        if let Some(c) = p.source_column() {
                            if aggregated && !self.group_by.iter().any(|g| g == c) {
                                return fail(format!("column {c} is neither grouped nor aggregated"));
                            }
                        }
                    }
                }
            }
            _ => {
                if self.writes.is_empty() {
                    return fail("write-set is empty".into());
                }
                if !self.projection.is_empty() || !self.group_by.is_empty() {
                    return fail("projection on a write statement".into());
                }
                if self.for_update {
                    return fail("FOR UPDATE on a write statement".into());
                }
            }
        }
        match self.kind {
            StatementKind::Insert => {
                if self.rows.is_empty() {
                    return fail("insert without rows".into());
                }
                if self.columns.is_empty() {
                    return fail("insert without columns".into());
                }
                if let Some(r) = self.rows.iter().find(|r| r.len() != self.columns.len()) {
                    return fail(format!("row arity {} != {} columns", r.len(), self.columns.len()));
                }
                if self.predicate.is_some() {
                    return fail("insert with predicate".into());
                }
            }
            StatementKind::Update => {
                if self.assignments.is_empty() {
                    return fail("update without assignments".into());
                }
                let mut seen = BTreeSet::new();
                for a in &self.assignments {
                    if !seen.insert(&a.column) {
                        return fail(format!("column {} assigned twice", a.column));
                    }
                }
            }
            _ => {}
        }
        if !self.assignments.is_empty() && self.kind != StatementKind::Update {
            return fail("assignments outside update".into());
        }
        if let Some(p) = &self.predicate {
            p.check_invariants()?;
        }
        let missing_reads: Vec<_> = self.referenced_reads().into_iter().filter(|c| !self.reads.contains(c)).collect();
        if !missing_reads.is_empty() {
            return fail(format!("read-set omits {}", missing_reads.join(", ")));
        }
        let missing_writes: Vec<_> = self.referenced_writes().into_iter().filter(|c| !self.writes.contains(c)).collect();
        if !missing_writes.is_empty() {
            return fail(format!("write-set omits {}", missing_writes.join(", ")));
        }
        if let Some(schema) = schema {
            let table = schema.require_table(&self.table)?;
            for c in self.reads.iter().chain(&self.writes) {
                if table.column(c).is_none() {
                    return Err(ModelError::Schema(format!("unknown column {}.{c}", self.table)));
                }
            }
        }
        Ok(())
    }

    /// Parameter names in order of first appearance in the rendered text.
    pub fn params(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.projection {
            if let crate::expr::ProjItem::Sum(e) = &p.item {
                e.collect_params(&mut out);
            }
        }
        for row in &self.rows {
            for op in row {
                if let Operand::Param(p) = op {
                    if !out.contains(p) {
                        out.push(p.clone());
                    }
                }
            }
        }
        for a in &self.assignments {
            a.expr.collect_params(&mut out);
        }
        if let Some(p) = &self.predicate {
            p.collect_params(&mut out);
        }
        out
    }

    pub fn is_bound(&self) -> bool {
        self.params().is_empty()
    }

    pub fn bind(&self, lookup: &Lookup<'_>) -> Result<Statement, ModelError> {
        let mut out = self.clone();
        for p in &mut out.projection {
            if let crate::expr::ProjItem::Sum(e) = &mut p.item {
                *e = e.bind(lookup)?;
            }
        }
        out.rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|op| match op {
                        Operand::Param(p) => lookup(p)
                            .map(Operand::Value)
                            .ok_or_else(|| ModelError::Unbound(p.clone())),
                        other => Ok(other.clone()),
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        out.assignments = self
            .assignments
            .iter()
            .map(|a| Ok(Assignment::new(a.column.clone(), a.expr.bind(lookup)?)))
            .collect::<Result<_, ModelError>>()?;
        out.predicate = self.predicate.as_ref().map(|p| p.bind(lookup)).transpose()?;
        Ok(out)
    }

    /// Binds parameters positionally, one value per distinct parameter in
    /// order of first appearance.
    pub fn bind_positional(&self, values: &[Value]) -> Result<Statement, ModelError> {
        let names = self.params();
        if names.len() != values.len() {
            return Err(ModelError::Arity { expected: names.len(), got: values.len() });
        }
        self.bind(&|name: &str| names.iter().position(|n| n == name).map(|i| values[i].clone()))
    }

    /// The statement with every literal replaced by NULL: two instances of
    /// the same template share a shape.
    pub fn shape(&self) -> Statement {
        let mut out = self.clone();
        for p in &mut out.projection {
            if let crate::expr::ProjItem::Sum(e) = &mut p.item {
                *e = e.mask();
            }
        }
        out.rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|op| match op {
                        Operand::Value(_) => Operand::Value(Value::Null),
                        other => other.clone(),
                    })
                    .collect()
            })
            .collect();
        out.assignments = self
            .assignments
            .iter()
            .map(|a| Assignment::new(a.column.clone(), a.expr.mask()))
            .collect();
        out.predicate = self.predicate.as_ref().map(Predicate::mask);
        out
    }

    /// Plain-column projections in order.
    pub fn projected_columns(&self) -> Vec<&str> {
        self.projection.iter().filter_map(Projection::source_column).collect()
    }

    pub fn is_aggregate(&self) -> bool {
        self.projection.iter().any(Projection::is_aggregate)
    }

    pub fn assignment(&self, column: &str) -> Option<&Expr> {
        self.assignments.iter().find(|a| a.column == column).map(|a| &a.expr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Predicate;

    fn district_update() -> Statement {
        Statement::update("district", vec![Assignment::add_value("d_next_o_id", 1)])
            .filter(Predicate::key_params([("d_w_id", "w_id"), ("d_id", "d_id")]))
    }

    #[test]
    fn derived_access_of_counter_update() {
        let s = district_update().access_sets();
        let reads: Vec<_> = s.reads.iter().map(String::as_str).collect();
        assert_eq!(reads, vec!["d_id", "d_next_o_id", "d_w_id"]);
        assert_eq!(s.writes.iter().map(String::as_str).collect::<Vec<_>>(), vec!["d_next_o_id"]);
        assert!(!s.locking);
    }

    #[test]
    fn missing_read_is_rejected() {
        let mut s = district_update();
        s.reads.remove("d_w_id");
        assert!(matches!(s.validate(None), Err(ModelError::Validation(_))));
    }

    #[test]
    fn select_with_writes_is_rejected() {
        let mut s = Statement::select_columns("t", &["v"]);
        s.writes.insert("v".into());
        assert!(s.validate(None).is_err());
    }

    #[test]
    fn positional_binding_follows_first_appearance() {
        let s = district_update();
        assert_eq!(s.params(), vec!["w_id", "d_id"]);
        let b = s.bind_positional(&[Value::Int(1), Value::Int(2)]).unwrap();
        assert!(b.is_bound());
        assert!(matches!(
            s.bind_positional(&[Value::Int(1)]),
            Err(ModelError::Arity { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn instances_share_shape() {
        let s = district_update();
        let a = s.bind_positional(&[Value::Int(1), Value::Int(2)]).unwrap();
        let b = s.bind_positional(&[Value::Int(1), Value::Int(5)]).unwrap();
        assert_eq!(a.shape(), b.shape());
        assert_ne!(a, b);
    }
}
