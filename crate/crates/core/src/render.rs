//! Canonical SQL text.
//!
//! Keywords are uppercase, tokens are separated by single spaces and list
//! items by `", "`. The same statement always renders to the same bytes.

use std::fmt::Write;
use std::str::FromStr;

use crate::error::ModelError;
use crate::expr::{Expr, Operand, Predicate, ProjItem, Projection};
use crate::statement::{Statement, StatementKind};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dialect {
    #[default]
    MySql,
    Postgres,
    /// No row-value constructors: tuple IN is expanded into OR of ANDs.
    Legacy,
}

impl Dialect {
    pub fn supports_tuple_in(self) -> bool {
        !matches!(self, Dialect::Legacy)
    }
}

impl FromStr for Dialect {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mysql" => Ok(Dialect::MySql),
            "postgres" | "postgresql" => Ok(Dialect::Postgres),
            "legacy" => Ok(Dialect::Legacy),
            other => Err(ModelError::Unsupported(format!("dialect {other}"))),
        }
    }
}

/// Renders a statement; unbound parameters appear as `?`.
pub fn render(stmt: &Statement, dialect: Dialect) -> String {
    let mut out = String::new();
    match stmt.kind {
        StatementKind::Select => {
            out.push_str("SELECT ");
            join(&mut out, &stmt.projection, projection);
            let _ = write!(out, " FROM {}", stmt.table);
            where_clause(&mut out, stmt, dialect);
            if !stmt.group_by.is_empty() {
                let _ = write!(out, " GROUP BY {}", stmt.group_by.join(", "));
            }
            if stmt.for_update {
                out.push_str(" FOR UPDATE");
            }
        }
        StatementKind::Insert => {
            let _ = write!(out, "INSERT INTO {} ({}) VALUES ", stmt.table, stmt.columns.join(", "));
            join(&mut out, &stmt.rows, |o, row| {
                o.push('(');
                join(o, row, operand);
                o.push(')');
            });
        }
        StatementKind::Update => {
            let _ = write!(out, "UPDATE {} SET ", stmt.table);
            join(&mut out, &stmt.assignments, |o, a| {
                let _ = write!(o, "{} = ", a.column);
                expr(o, &a.expr, dialect);
            });
            where_clause(&mut out, stmt, dialect);
        }
        StatementKind::Delete => {
            let _ = write!(out, "DELETE FROM {}", stmt.table);
            where_clause(&mut out, stmt, dialect);
        }
    }
    out
}

/// Binds `bindings` positionally and renders.
pub fn render_sql(stmt: &Statement, bindings: &[Value], dialect: Dialect) -> Result<String, ModelError> {
    Ok(render(&stmt.bind_positional(bindings)?, dialect))
}

pub fn render_predicate(p: &Predicate, dialect: Dialect) -> String {
    let mut out = String::new();
    predicate(&mut out, p, dialect);
    out
}

pub fn render_expr_plain(e: &Expr) -> String {
    let mut out = String::new();
    expr(&mut out, e, Dialect::MySql);
    out
}

fn join<T>(out: &mut String, items: &[T], mut f: impl FnMut(&mut String, &T)) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        f(out, item);
    }
}

fn where_clause(out: &mut String, stmt: &Statement, dialect: Dialect) {
    if let Some(p) = &stmt.predicate {
        out.push_str(" WHERE ");
        predicate(out, p, dialect);
    }
}

fn projection(out: &mut String, p: &Projection) {
    match &p.item {
        ProjItem::Column(c) => out.push_str(c),
        ProjItem::Sum(e) => {
            out.push_str("SUM(");
            expr(out, e, Dialect::MySql);
            out.push(')');
        }
    }
    if let Some(a) = &p.alias {
        let _ = write!(out, " AS {a}");
    }
}

fn operand(out: &mut String, op: &Operand) {
    match op {
        Operand::Value(v) => {
            let _ = write!(out, "{v}");
        }
        Operand::Param(_) => out.push('?'),
        Operand::Column(c) => out.push_str(c),
    }
}

fn predicate(out: &mut String, p: &Predicate, dialect: Dialect) {
    match p {
        Predicate::Eq(c, op) => {
            let _ = write!(out, "{c} = ");
            operand(out, op);
        }
        Predicate::In(c, ops) => {
            let _ = write!(out, "{c} IN (");
            join(out, ops, operand);
            out.push(')');
        }
        Predicate::TupleIn(cs, rows) if dialect.supports_tuple_in() => {
            let _ = write!(out, "({}) IN (", cs.join(", "));
            join(out, rows, |o, row| {
                o.push('(');
                join(o, row, operand);
                o.push(')');
            });
            out.push(')');
        }
        Predicate::TupleIn(cs, rows) => {
            out.push('(');
            for (i, row) in rows.iter().enumerate() {
                if i > 0 {
                    out.push_str(" OR ");
                }
                out.push('(');
                for (j, (c, op)) in cs.iter().zip(row).enumerate() {
                    if j > 0 {
                        out.push_str(" AND ");
                    }
                    let _ = write!(out, "{c} = ");
                    operand(out, op);
                }
                out.push(')');
            }
            out.push(')');
        }
        Predicate::And(ps) => {
            for (i, child) in ps.iter().enumerate() {
                if i > 0 {
                    out.push_str(" AND ");
                }
                if matches!(child, Predicate::Or(_)) {
                    out.push('(');
                    predicate(out, child, dialect);
                    out.push(')');
                } else {
                    predicate(out, child, dialect);
                }
            }
        }
        Predicate::Or(ps) => {
            for (i, child) in ps.iter().enumerate() {
                if i > 0 {
                    out.push_str(" OR ");
                }
                if matches!(child, Predicate::And(_)) {
                    out.push('(');
                    predicate(out, child, dialect);
                    out.push(')');
                } else {
                    predicate(out, child, dialect);
                }
            }
        }
    }
}

fn is_additive(e: &Expr) -> bool {
    matches!(e, Expr::Add(..) | Expr::Sub(..))
}

fn expr(out: &mut String, e: &Expr, dialect: Dialect) {
    let paren = |out: &mut String, e: &Expr, wrap: bool| {
        if wrap {
            out.push('(');
            expr(out, e, dialect);
            out.push(')');
        } else {
            expr(out, e, dialect);
        }
    };
    match e {
        Expr::Value(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Param(_) => out.push('?'),
        Expr::Column(c) => out.push_str(c),
        Expr::Add(a, b) => {
            paren(out, a, false);
            out.push_str(" + ");
            paren(out, b, is_additive(b));
        }
        Expr::Sub(a, b) => {
            paren(out, a, false);
            out.push_str(" - ");
            paren(out, b, is_additive(b));
        }
        Expr::Mul(a, b) => {
            paren(out, a, is_additive(a));
            out.push_str(" * ");
            paren(out, b, is_additive(b) || matches!(**b, Expr::Mul(..)));
        }
        Expr::Case { branches, otherwise } => {
            out.push_str("CASE");
            for (p, e) in branches {
                out.push_str(" WHEN ");
                predicate(out, p, dialect);
                out.push_str(" THEN ");
                expr(out, e, dialect);
            }
            out.push_str(" ELSE ");
            expr(out, otherwise, dialect);
            out.push_str(" END");
        }
    }
}
