//! Operands, scalar expressions, predicates, projections and assignments.

use std::collections::BTreeSet;

use crate::error::{EvalError, ModelError};
use crate::value::{Decimal, Value};

/// Read access to a row by column name.
pub trait RowAccess {
    fn get(&self, column: &str) -> Option<&Value>;
}

impl RowAccess for [(String, Value)] {
    fn get(&self, column: &str) -> Option<&Value> {
        self.iter().find(|(c, _)| c == column).map(|(_, v)| v)
    }
}

impl RowAccess for std::collections::BTreeMap<String, Value> {
    fn get(&self, column: &str) -> Option<&Value> {
        std::collections::BTreeMap::get(self, column)
    }
}

/// Parameter lookup used when binding templates.
pub type Lookup<'a> = dyn Fn(&str) -> Option<Value> + 'a;

/// Records a column name, allocating only the first time it is seen.
fn note(out: &mut BTreeSet<String>, c: &str) {
    if !out.contains(c) {
        out.insert(c.to_owned());
    }
}

/// Right-hand side of a comparison or an insert cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(Value),
    Param(String),
    Column(String),
}

impl Operand {
    pub fn param(name: impl Into<String>) -> Self {
        Operand::Param(name.into())
    }

    pub fn value(v: impl Into<Value>) -> Self {
        Operand::Value(v.into())
    }

    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Operand::Value(v) => Some(v),
            _ => None,
        }
    }

    fn bind(&self, lookup: &Lookup<'_>) -> Result<Operand, ModelError> {
        match self {
            Operand::Param(name) => lookup(name)
                .map(Operand::Value)
                .ok_or_else(|| ModelError::Unbound(name.clone())),
            other => Ok(other.clone()),
        }
    }

    pub fn eval(&self, row: &dyn RowAccess) -> Result<Value, EvalError> {
        match self {
            Operand::Value(v) => Ok(v.clone()),
            Operand::Param(p) => Err(EvalError::Unbound(p.clone())),
            Operand::Column(c) => row
                .get(c)
                .cloned()
                .ok_or_else(|| EvalError::UnknownColumn(c.clone())),
        }
    }

    fn collect_params(&self, out: &mut Vec<String>) {
        if let Operand::Param(p) = self {
            if !out.contains(p) {
                out.push(p.clone());
            }
        }
    }

    fn collect_columns(&self, out: &mut BTreeSet<String>) {
        if let Operand::Column(c) = self {
            note(out, c);
        }
    }

    fn mask(&self) -> Operand {
        match self {
            Operand::Value(_) => Operand::Value(Value::Null),
            other => other.clone(),
        }
    }
}

impl From<Value> for Operand {
    fn from(v: Value) -> Self {
        Operand::Value(v)
    }
}

/// Scalar expression used in assignments and aggregate arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Value(Value),
    Param(String),
    Column(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// `CASE WHEN p1 THEN e1 ... ELSE otherwise END`.
    Case {
        branches: Vec<(Predicate, Expr)>,
        otherwise: Box<Expr>,
    },
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Self {
        Expr::Column(name.into())
    }

    pub fn param(name: impl Into<String>) -> Self {
        Expr::Param(name.into())
    }

    pub fn value(v: impl Into<Value>) -> Self {
        Expr::Value(v.into())
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn bind(&self, lookup: &Lookup<'_>) -> Result<Expr, ModelError> {
        Ok(match self {
            Expr::Param(name) => Expr::Value(lookup(name).ok_or_else(|| ModelError::Unbound(name.clone()))?),
            Expr::Value(_) | Expr::Column(_) => self.clone(),
            Expr::Add(a, b) => Expr::add(a.bind(lookup)?, b.bind(lookup)?),
            Expr::Sub(a, b) => Expr::sub(a.bind(lookup)?, b.bind(lookup)?),
            Expr::Mul(a, b) => Expr::mul(a.bind(lookup)?, b.bind(lookup)?),
            Expr::Case { branches, otherwise } => Expr::Case {
                branches: branches
                    .iter()
                    .map(|(p, e)| Ok((p.bind(lookup)?, e.bind(lookup)?)))
                    .collect::<Result<_, ModelError>>()?,
                otherwise: Box::new(otherwise.bind(lookup)?),
            },
        })
    }

    pub fn eval(&self, row: &dyn RowAccess) -> Result<Value, EvalError> {
        match self {
            Expr::Value(v) => Ok(v.clone()),
            Expr::Param(p) => Err(EvalError::Unbound(p.clone())),
            Expr::Column(c) => row
                .get(c)
                .cloned()
                .ok_or_else(|| EvalError::UnknownColumn(c.clone())),
            Expr::Add(a, b) => add_values(&a.eval(row)?, &b.eval(row)?),
            Expr::Sub(a, b) => sub_values(&a.eval(row)?, &b.eval(row)?),
            Expr::Mul(a, b) => mul_values(&a.eval(row)?, &b.eval(row)?),
            Expr::Case { branches, otherwise } => {
                for (pred, expr) in branches {
                    if pred.matches(row)? {
                        return expr.eval(row);
                    }
                }
                otherwise.eval(row)
            }
        }
    }

    pub fn collect_params(&self, out: &mut Vec<String>) {
        match self {
            Expr::Param(p) => {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
            Expr::Value(_) | Expr::Column(_) => {}
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.collect_params(out);
                b.collect_params(out);
            }
            Expr::Case { branches, otherwise } => {
                for (p, e) in branches {
                    p.collect_params(out);
                    e.collect_params(out);
                }
                otherwise.collect_params(out);
            }
        }
    }

    pub fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Column(c) => {
                note(out, c);
            }
            Expr::Value(_) | Expr::Param(_) => {}
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
            Expr::Case { branches, otherwise } => {
                for (p, e) in branches {
                    p.collect_columns(out);
                    e.collect_columns(out);
                }
                otherwise.collect_columns(out);
            }
        }
    }

    /// True when the expression reads no column (a constant after binding).
    pub fn is_constant(&self) -> bool {
        let mut cols = BTreeSet::new();
        self.collect_columns(&mut cols);
        cols.is_empty()
    }

    pub(crate) fn mask(&self) -> Expr {
        match self {
            Expr::Value(_) => Expr::Value(Value::Null),
            Expr::Param(_) | Expr::Column(_) => self.clone(),
            Expr::Add(a, b) => Expr::add(a.mask(), b.mask()),
            Expr::Sub(a, b) => Expr::sub(a.mask(), b.mask()),
            Expr::Mul(a, b) => Expr::mul(a.mask(), b.mask()),
            Expr::Case { branches, otherwise } => Expr::Case {
                branches: branches.iter().map(|(p, e)| (p.mask(), e.mask())).collect(),
                otherwise: Box::new(otherwise.mask()),
            },
        }
    }
}

impl From<Operand> for Expr {
    fn from(op: Operand) -> Self {
        match op {
            Operand::Value(v) => Expr::Value(v),
            Operand::Param(p) => Expr::Param(p),
            Operand::Column(c) => Expr::Column(c),
        }
    }
}

fn mismatch(op: &str, a: &Value, b: &Value) -> EvalError {
    EvalError::TypeMismatch(format!("{} {op} {}", a.type_name(), b.type_name()))
}

pub fn add_values(a: &Value, b: &Value) -> Result<Value, EvalError> {
    match (a, b) {
        (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
        (Value::Int(x), Value::Int(y)) => x.checked_add(*y).map(Value::Int).ok_or(EvalError::Overflow),
        (Value::Timestamp(x), Value::Int(y)) | (Value::Int(y), Value::Timestamp(x)) => {
            x.checked_add(*y).map(Value::Timestamp).ok_or(EvalError::Overflow)
        }
        (Value::Decimal(_) | Value::Int(_), Value::Decimal(_) | Value::Int(_)) => {
            let (x, y) = (a.as_decimal(), b.as_decimal());
            match (x, y) {
                (Some(x), Some(y)) => x.checked_add(y).map(Value::Decimal).ok_or(EvalError::Overflow),
                _ => Err(EvalError::Overflow),
            }
        }
        _ => Err(mismatch("+", a, b)),
    }
}

pub fn sub_values(a: &Value, b: &Value) -> Result<Value, EvalError> {
    add_values(a, &negate(b)?)
}

pub fn negate(v: &Value) -> Result<Value, EvalError> {
    match v {
        Value::Null => Ok(Value::Null),
        Value::Int(x) => x.checked_neg().map(Value::Int).ok_or(EvalError::Overflow),
        Value::Decimal(d) => d.checked_neg().map(Value::Decimal).ok_or(EvalError::Overflow),
        other => Err(EvalError::TypeMismatch(format!("cannot negate {}", other.type_name()))),
    }
}

pub fn mul_values(a: &Value, b: &Value) -> Result<Value, EvalError> {
    match (a, b) {
        (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
        (Value::Int(x), Value::Int(y)) => x.checked_mul(*y).map(Value::Int).ok_or(EvalError::Overflow),
        (Value::Decimal(d), Value::Int(n)) | (Value::Int(n), Value::Decimal(d)) => {
            d.checked_mul_int(*n).map(Value::Decimal).ok_or(EvalError::Overflow)
        }
        (Value::Decimal(x), Value::Decimal(y)) => x.checked_mul(*y).map(Value::Decimal).ok_or(EvalError::Overflow),
        _ => Err(mismatch("*", a, b)),
    }
}

/// Zero of the same numeric type, used to recognise no-op deltas.
pub fn is_zero(v: &Value) -> bool {
    match v {
        Value::Int(0) => true,
        Value::Decimal(d) => *d == Decimal::ZERO,
        _ => false,
    }
}

/// Boolean filter over a single table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Eq(String, Operand),
    In(String, Vec<Operand>),
    TupleIn(Vec<String>, Vec<Vec<Operand>>),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl Predicate {
    pub fn eq(column: impl Into<String>, operand: impl Into<Operand>) -> Self {
        Predicate::Eq(column.into(), operand.into())
    }

    pub fn eq_param(column: impl Into<String>, param: impl Into<String>) -> Self {
        Predicate::Eq(column.into(), Operand::Param(param.into()))
    }

    /// Conjunction of `column = param` over pairs, flattened when single.
    pub fn key_params<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut items: Vec<Predicate> = pairs.into_iter().map(|(c, p)| Predicate::eq_param(c, p)).collect();
        if items.len() == 1 {
            items.pop().expect("one item")
        } else {
            Predicate::And(items)
        }
    }

    pub fn bind(&self, lookup: &Lookup<'_>) -> Result<Predicate, ModelError> {
        Ok(match self {
            Predicate::Eq(c, op) => Predicate::Eq(c.clone(), op.bind(lookup)?),
            Predicate::In(c, ops) => Predicate::In(
                c.clone(),
                ops.iter().map(|o| o.bind(lookup)).collect::<Result<_, _>>()?,
            ),
            Predicate::TupleIn(cs, rows) => Predicate::TupleIn(
                cs.clone(),
                rows.iter()
                    .map(|r| r.iter().map(|o| o.bind(lookup)).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<_, _>>()?,
            ),
            Predicate::And(ps) => Predicate::And(ps.iter().map(|p| p.bind(lookup)).collect::<Result<_, _>>()?),
            Predicate::Or(ps) => Predicate::Or(ps.iter().map(|p| p.bind(lookup)).collect::<Result<_, _>>()?),
        })
    }

    pub fn matches(&self, row: &dyn RowAccess) -> Result<bool, EvalError> {
        match self {
            Predicate::Eq(c, op) => {
                let left = row.get(c).ok_or_else(|| EvalError::UnknownColumn(c.clone()))?;
                Ok(left.sql_eq(&op.eval(row)?))
            }
            Predicate::In(c, ops) => {
                let left = row.get(c).ok_or_else(|| EvalError::UnknownColumn(c.clone()))?;
                for op in ops {
                    if left.sql_eq(&op.eval(row)?) {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Predicate::TupleIn(cs, tuples) => {
                let left: Vec<&Value> = cs
                    .iter()
                    .map(|c| row.get(c).ok_or_else(|| EvalError::UnknownColumn(c.clone())))
                    .collect::<Result<_, _>>()?;
                'tuples: for tuple in tuples {
                    for (l, op) in left.iter().zip(tuple) {
                        if !l.sql_eq(&op.eval(row)?) {
                            continue 'tuples;
                        }
                    }
                    return Ok(true);
                }
                Ok(false)
            }
            Predicate::And(ps) => {
                for p in ps {
                    if !p.matches(row)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Predicate::Or(ps) => {
                for p in ps {
                    if p.matches(row)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    pub fn collect_params(&self, out: &mut Vec<String>) {
        match self {
            Predicate::Eq(_, op) => op.collect_params(out),
            Predicate::In(_, ops) => ops.iter().for_each(|o| o.collect_params(out)),
            Predicate::TupleIn(_, rows) => rows.iter().flatten().for_each(|o| o.collect_params(out)),
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.collect_params(out)),
        }
    }

    pub fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            Predicate::Eq(c, op) => {
                note(out, c);
                op.collect_columns(out);
            }
            Predicate::In(c, ops) => {
                note(out, c);
                ops.iter().for_each(|o| o.collect_columns(out));
            }
            Predicate::TupleIn(cs, rows) => {
                cs.iter().for_each(|c| note(out, c));
                rows.iter().flatten().for_each(|o| o.collect_columns(out));
            }
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.collect_columns(out)),
        }
    }

    pub fn columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out
    }

    /// If the predicate is a conjunction of `column = literal` terms, returns
    /// them in source order.
    pub fn equality_terms(&self) -> Option<Vec<(&str, &Value)>> {
        match self {
            Predicate::Eq(c, Operand::Value(v)) => Some(vec![(c.as_str(), v)]),
            Predicate::And(ps) if !ps.is_empty() => {
                let mut out = Vec::with_capacity(ps.len());
                for p in ps {
                    match p {
                        Predicate::Eq(c, Operand::Value(v)) => out.push((c.as_str(), v)),
                        _ => return None,
                    }
                }
                let mut seen = BTreeSet::new();
                if out.iter().all(|(c, _)| seen.insert(*c)) {
                    Some(out)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Structural invariants: non-empty, duplicate-free literal lists and
    /// uniform tuple arity.
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        match self {
            Predicate::Eq(..) => Ok(()),
            Predicate::In(c, ops) => {
                if ops.is_empty() {
                    return Err(ModelError::Validation(format!("empty IN list on {c}")));
                }
                check_distinct(ops.iter().map(std::slice::from_ref))
            }
            Predicate::TupleIn(cs, rows) => {
                if cs.is_empty() || rows.is_empty() {
                    return Err(ModelError::Validation("empty tuple IN".into()));
                }
                if rows.iter().any(|r| r.len() != cs.len()) {
                    return Err(ModelError::Validation(format!(
                        "tuple IN arity mismatch for ({})",
                        cs.join(", ")
                    )));
                }
                check_distinct(rows.iter().map(Vec::as_slice))
            }
            Predicate::And(ps) | Predicate::Or(ps) => {
                if ps.is_empty() {
                    return Err(ModelError::Validation("empty AND/OR".into()));
                }
                ps.iter().try_for_each(Predicate::check_invariants)
            }
        }
    }

    pub(crate) fn mask(&self) -> Predicate {
        match self {
            Predicate::Eq(c, op) => Predicate::Eq(c.clone(), op.mask()),
            Predicate::In(c, ops) => Predicate::In(c.clone(), ops.iter().map(Operand::mask).collect()),
            Predicate::TupleIn(cs, rows) => Predicate::TupleIn(
                cs.clone(),
                rows.iter().map(|r| r.iter().map(Operand::mask).collect()).collect(),
            ),
            Predicate::And(ps) => Predicate::And(ps.iter().map(Predicate::mask).collect()),
            Predicate::Or(ps) => Predicate::Or(ps.iter().map(Predicate::mask).collect()),
        }
    }
}

fn check_distinct<'a>(items: impl Iterator<Item = &'a [Operand]>) -> Result<(), ModelError> {
    let mut seen: Vec<&[Operand]> = Vec::new();
    for item in items {
        if item.iter().all(|o| matches!(o, Operand::Value(_))) {
            if seen.contains(&item) {
                return Err(ModelError::Validation(format!("duplicate IN entry {item:?}")));
            }
            seen.push(item);
        }
    }
    Ok(())
}

/// Output column of a select.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProjItem {
    Column(String),
    Sum(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Projection {
    pub item: ProjItem,
    pub alias: Option<String>,
}

impl Projection {
    pub fn column(name: impl Into<String>) -> Self {
        Projection { item: ProjItem::Column(name.into()), alias: None }
    }

    pub fn sum(expr: Expr) -> Self {
        Projection { item: ProjItem::Sum(expr), alias: None }
    }

    pub fn alias(mut self, alias: impl Into<String>) -> Self {
        self.alias = Some(alias.into());
        self
    }

    pub fn is_aggregate(&self) -> bool {
        matches!(self.item, ProjItem::Sum(_))
    }

    /// The plain column this projection reads, if it is not an aggregate.
    pub fn source_column(&self) -> Option<&str> {
        match &self.item {
            ProjItem::Column(c) => Some(c),
            ProjItem::Sum(_) => None,
        }
    }

    /// Name of the result column.
    pub fn output_name(&self) -> String {
        if let Some(a) = &self.alias {
            return a.clone();
        }
        match &self.item {
            ProjItem::Column(c) => c.clone(),
            ProjItem::Sum(e) => format!("SUM({})", crate::render::render_expr_plain(e)),
        }
    }

    pub fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match &self.item {
            ProjItem::Column(c) => {
                note(out, c);
            }
            ProjItem::Sum(e) => e.collect_columns(out),
        }
    }
}

/// `column = expr` in an update.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub column: String,
    pub expr: Expr,
}

impl Assignment {
    pub fn new(column: impl Into<String>, expr: Expr) -> Self {
        Assignment { column: column.into(), expr }
    }

    /// `column = column + param`.
    pub fn add_param(column: &str, param: &str) -> Self {
        Assignment::new(column, Expr::add(Expr::col(column), Expr::param(param)))
    }

    /// `column = column + value`.
    pub fn add_value(column: &str, delta: impl Into<Value>) -> Self {
        Assignment::new(column, Expr::add(Expr::col(column), Expr::value(delta)))
    }

    /// If the assignment is `col = col + v`, `col = v + col` or
    /// `col = col - v` with a literal `v`, returns the signed delta.
    pub fn delta(&self) -> Option<Value> {
        let own = |e: &Expr| matches!(e, Expr::Column(c) if *c == self.column);
        match &self.expr {
            Expr::Add(a, b) => match (a.as_ref(), b.as_ref()) {
                (l, Expr::Value(v)) if own(l) => Some(v.clone()),
                (Expr::Value(v), r) if own(r) => Some(v.clone()),
                _ => None,
            },
            Expr::Sub(a, b) => match (a.as_ref(), b.as_ref()) {
                (l, Expr::Value(v)) if own(l) => negate(v).ok(),
                _ => None,
            },
            _ => None,
        }
    }

    /// True for assignments that leave the column unchanged (`c = c`,
    /// `c = c + 0`).
    pub fn is_noop(&self) -> bool {
        matches!(&self.expr, Expr::Column(c) if *c == self.column)
            || self.delta().is_some_and(|d| is_zero(&d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn row(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn case_falls_back_to_else() {
        let e = Expr::Case {
            branches: vec![(Predicate::eq("id", Value::Int(3)), Expr::value(5))],
            otherwise: Box::new(Expr::col("value")),
        };
        assert_eq!(e.eval(&row(&[("id", Value::Int(3)), ("value", Value::Int(1))])).unwrap(), Value::Int(5));
        assert_eq!(e.eval(&row(&[("id", Value::Int(4)), ("value", Value::Int(1))])).unwrap(), Value::Int(1));
    }

    #[test]
    fn tuple_in_matches_whole_tuple_only() {
        let p = Predicate::TupleIn(
            vec!["a".into(), "b".into()],
            vec![
                vec![Operand::value(1), Operand::value(2)],
                vec![Operand::value(3), Operand::value(4)],
            ],
        );
        assert!(p.matches(&row(&[("a", Value::Int(3)), ("b", Value::Int(4))])).unwrap());
        assert!(!p.matches(&row(&[("a", Value::Int(1)), ("b", Value::Int(4))])).unwrap());
    }

    #[test]
    fn in_list_invariants() {
        assert!(Predicate::In("id".into(), vec![]).check_invariants().is_err());
        let dup = Predicate::In("id".into(), vec![Operand::value(1), Operand::value(1)]);
        assert!(dup.check_invariants().is_err());
        let arity = Predicate::TupleIn(vec!["a".into(), "b".into()], vec![vec![Operand::value(1)]]);
        assert!(arity.check_invariants().is_err());
    }

    #[test]
    fn delta_recognition() {
        assert_eq!(Assignment::add_value("x", 2).delta(), Some(Value::Int(2)));
        let sub = Assignment::new("x", Expr::sub(Expr::col("x"), Expr::value(Value::dec("1.50"))));
        assert_eq!(sub.delta(), Some(Value::dec("-1.50")));
        let other = Assignment::new("x", Expr::add(Expr::col("y"), Expr::value(1)));
        assert_eq!(other.delta(), None);
        assert!(Assignment::add_value("x", 0).is_noop());
        assert!(Assignment::new("x", Expr::col("x")).is_noop());
    }

    #[test]
    fn null_propagates_through_arithmetic() {
        assert_eq!(add_values(&Value::Null, &Value::Int(1)).unwrap(), Value::Null);
        assert!(add_values(&Value::str("a"), &Value::Int(1)).is_err());
        assert_eq!(mul_values(&Value::dec("1.25"), &Value::Int(4)).unwrap(), Value::dec("5.00"));
    }
}
