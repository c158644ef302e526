//! Transaction templates and their JSON definition format.
//!
//! Operands are written as JSON scalars (literals), `"?name"` strings
//! (parameters) or `{"col": name}` (column references). Predicates use
//! `{"eq": [col, operand]}`, `{"in": [col, [operands]]}`,
//! `{"tuple_in": [[cols], [[operands]]]}`, `{"and": [...]}` and
//! `{"or": [...]}`. Expressions add `{"add"|"sub"|"mul": [a, b]}` and
//! `{"case": {"when": [[predicate, expr], ...], "else": expr}}`.

use serde_json::{Map, Value as Json};

use crate::error::ModelError;
use crate::expr::{Assignment, Expr, Operand, Predicate, ProjItem, Projection};
use crate::schema::Schema;
use crate::statement::{Statement, StatementKind};
use crate::value::Value;

/// A later statement's parameter bound from an earlier statement's result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataflow {
    /// 1-based index of the producing statement.
    pub from: usize,
    /// Result column (or alias) read from the producer.
    pub column: String,
    /// 1-based indices of consuming statements.
    pub to: Vec<usize>,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionTemplate {
    pub name: String,
    pub partition_key: Vec<String>,
    pub statements: Vec<Statement>,
    pub dataflow: Vec<Dataflow>,
    /// Multi-statement groups the developer rewrote by hand into a merged
    /// form (1-based, inclusive).
    pub merged_groups: Vec<(usize, usize)>,
}

impl TransactionTemplate {
    pub fn new(name: &str, partition_key: &[&str], statements: Vec<Statement>) -> Self {
        TransactionTemplate {
            name: name.to_string(),
            partition_key: partition_key.iter().map(|s| s.to_string()).collect(),
            statements,
            dataflow: Vec::new(),
            merged_groups: Vec::new(),
        }
    }

    /// Statement by 1-based index.
    pub fn statement(&self, index: usize) -> &Statement {
        &self.statements[index - 1]
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn validate(&self, schema: Option<&Schema>) -> Result<(), ModelError> {
        if self.statements.is_empty() {
            return Err(ModelError::Validation(format!("template {} has no statements", self.name)));
        }
        for (i, s) in self.statements.iter().enumerate() {
            s.validate(schema)
                .map_err(|e| annotate(e, &format!("{} statement {}", self.name, i + 1)))?;
        }
        let n = self.statements.len();
        for d in &self.dataflow {
            if d.from == 0 || d.from > n || d.to.iter().any(|&t| t <= d.from || t > n) {
                return Err(ModelError::Validation(format!("dataflow {} has out-of-range indices", d.param)));
            }
            for &t in &d.to {
                if !self.statement(t).params().contains(&d.param) {
                    return Err(ModelError::Validation(format!(
                        "dataflow parameter ?{} does not occur in statement {t}",
                        d.param
                    )));
                }
            }
        }
        for &(lo, hi) in &self.merged_groups {
            if lo == 0 || lo > hi || hi > n {
                return Err(ModelError::Validation(format!("merged group {lo}-{hi} out of range")));
            }
        }
        Ok(())
    }
}

fn annotate(e: ModelError, ctx: &str) -> ModelError {
    match e {
        ModelError::Validation(m) => ModelError::Validation(format!("{ctx}: {m}")),
        ModelError::Schema(m) => ModelError::Schema(format!("{ctx}: {m}")),
        ModelError::Parse(m) => ModelError::Parse(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Parses and validates a template definition against `schema`.
pub fn build_template(definition: &str, schema: &Schema) -> Result<TransactionTemplate, ModelError> {
    let json: Json = serde_json::from_str(definition).map_err(|e| ModelError::Parse(e.to_string()))?;
    template_from_json(&json, schema)
}

pub fn template_from_json(json: &Json, schema: &Schema) -> Result<TransactionTemplate, ModelError> {
    let obj = object(json, "template")?;
    let name = string_field(obj, "name")?;
    let partition_key = match obj.get("partition_key") {
        Some(Json::Array(items)) => items.iter().map(|k| string(k, "partition key")).collect::<Result<_, _>>()?,
        Some(_) => return Err(parse_err("partition_key must be a list")),
        None => Vec::new(),
    };
    let statements = match obj.get("statements") {
        Some(Json::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut stmt = statement_from_json(s).map_err(|e| annotate(e, &format!("statement {}", i + 1)))?;
                stmt.widen_delete(schema)?;
                Ok(stmt)
            })
            .collect::<Result<Vec<_>, ModelError>>()?,
        _ => return Err(parse_err("statements must be a list")),
    };
    let dataflow = match obj.get("dataflow") {
        None => Vec::new(),
        Some(Json::Array(items)) => items.iter().map(dataflow_from_json).collect::<Result<_, _>>()?,
        Some(_) => return Err(parse_err("dataflow must be a list")),
    };
    let merged_groups = match obj.get("merged_groups") {
        None => Vec::new(),
        Some(Json::Array(items)) => items
            .iter()
            .map(|g| match g.as_array().map(Vec::as_slice) {
                Some([lo, hi]) => Ok((index(lo)?, index(hi)?)),
                _ => Err(parse_err("merged group must be [lo, hi]")),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(parse_err("merged_groups must be a list")),
    };
    let t = TransactionTemplate { name, partition_key, statements, dataflow, merged_groups };
    t.validate(Some(schema))?;
    Ok(t)
}

fn parse_err(msg: impl Into<String>) -> ModelError {
    ModelError::Parse(msg.into())
}

fn object<'a>(json: &'a Json, what: &str) -> Result<&'a Map<String, Json>, ModelError> {
    json.as_object().ok_or_else(|| parse_err(format!("{what} must be an object")))
}

fn string(json: &Json, what: &str) -> Result<String, ModelError> {
    json.as_str().map(str::to_string).ok_or_else(|| parse_err(format!("{what} must be a string")))
}

fn string_field(obj: &Map<String, Json>, key: &str) -> Result<String, ModelError> {
    obj.get(key).ok_or_else(|| parse_err(format!("missing {key}"))).and_then(|v| string(v, key))
}

fn strings(json: &Json, what: &str) -> Result<Vec<String>, ModelError> {
    json.as_array()
        .ok_or_else(|| parse_err(format!("{what} must be a list")))?
        .iter()
        .map(|v| string(v, what))
        .collect()
}

fn index(json: &Json) -> Result<usize, ModelError> {
    json.as_u64().map(|v| v as usize).ok_or_else(|| parse_err("index must be a positive integer"))
}

fn single_key(obj: &Map<String, Json>) -> Option<(&str, &Json)> {
    if obj.len() == 1 {
        obj.iter().next().map(|(k, v)| (k.as_str(), v))
    } else {
        None
    }
}

fn dataflow_from_json(json: &Json) -> Result<Dataflow, ModelError> {
    let obj = object(json, "dataflow")?;
    Ok(Dataflow {
        from: index(obj.get("from").ok_or_else(|| parse_err("dataflow.from"))?)?,
        column: string_field(obj, "column")?,
        to: obj
            .get("to")
            .and_then(Json::as_array)
            .ok_or_else(|| parse_err("dataflow.to"))?
            .iter()
            .map(index)
            .collect::<Result<_, _>>()?,
        param: string_field(obj, "param")?,
    })
}

pub fn operand_from_json(json: &Json) -> Result<Operand, ModelError> {
    if let Some(s) = json.as_str() {
        if let Some(name) = s.strip_prefix('?') {
            if name.is_empty() {
                return Err(parse_err("empty parameter name"));
            }
            return Ok(Operand::Param(name.to_string()));
        }
    }
    if let Some(obj) = json.as_object() {
        if let Some(("col", c)) = single_key(obj) {
            return Ok(Operand::Column(string(c, "col")?));
        }
    }
    Ok(Operand::Value(Value::from_json(json)?))
}

pub fn expr_from_json(json: &Json) -> Result<Expr, ModelError> {
    if let Some(obj) = json.as_object() {
        if let Some((key, body)) = single_key(obj) {
            let pair = || -> Result<(Expr, Expr), ModelError> {
                match body.as_array().map(Vec::as_slice) {
                    Some([a, b]) => Ok((expr_from_json(a)?, expr_from_json(b)?)),
                    _ => Err(parse_err(format!("{key} takes two operands"))),
                }
            };
            match key {
                "add" => return pair().map(|(a, b)| Expr::add(a, b)),
                "sub" => return pair().map(|(a, b)| Expr::sub(a, b)),
                "mul" => return pair().map(|(a, b)| Expr::mul(a, b)),
                "case" => {
                    let case = object(body, "case")?;
                    let branches = case
                        .get("when")
                        .and_then(Json::as_array)
                        .ok_or_else(|| parse_err("case.when must be a list"))?
                        .iter()
                        .map(|b| match b.as_array().map(Vec::as_slice) {
                            Some([p, e]) => Ok((predicate_from_json(p)?, expr_from_json(e)?)),
                            _ => Err(parse_err("case branch must be [predicate, expr]")),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    if branches.is_empty() {
                        return Err(parse_err("case without branches"));
                    }
                    let otherwise = case.get("else").ok_or_else(|| parse_err("case requires else"))?;
                    return Ok(Expr::Case { branches, otherwise: Box::new(expr_from_json(otherwise)?) });
                }
                _ => {}
            }
        }
    }
    operand_from_json(json).map(Expr::from)
}

pub fn predicate_from_json(json: &Json) -> Result<Predicate, ModelError> {
    let obj = object(json, "predicate")?;
    let (key, body) = single_key(obj).ok_or_else(|| parse_err("predicate must have exactly one key"))?;
    let args = body.as_array().ok_or_else(|| parse_err(format!("{key} takes a list")))?;
    match key {
        "eq" => match args.as_slice() {
            [c, op] => Ok(Predicate::Eq(string(c, "eq column")?, operand_from_json(op)?)),
            _ => Err(parse_err("eq takes [column, operand]")),
        },
        "in" => match args.as_slice() {
            [c, Json::Array(ops)] => Ok(Predicate::In(
                string(c, "in column")?,
                ops.iter().map(operand_from_json).collect::<Result<_, _>>()?,
            )),
            _ => Err(parse_err("in takes [column, [operands]]")),
        },
        "tuple_in" => match args.as_slice() {
            [cols, Json::Array(rows)] => Ok(Predicate::TupleIn(
                strings(cols, "tuple_in columns")?,
                rows.iter()
                    .map(|r| {
                        r.as_array()
                            .ok_or_else(|| parse_err("tuple must be a list"))?
                            .iter()
                            .map(operand_from_json)
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<_, _>>()?,
            )),
            _ => Err(parse_err("tuple_in takes [[columns], [[operands]]]")),
        },
        "and" => Ok(Predicate::And(args.iter().map(predicate_from_json).collect::<Result<_, _>>()?)),
        "or" => Ok(Predicate::Or(args.iter().map(predicate_from_json).collect::<Result<_, _>>()?)),
        other => Err(parse_err(format!("unknown predicate {other}"))),
    }
}

fn projection_from_json(json: &Json) -> Result<Projection, ModelError> {
    if let Some(c) = json.as_str() {
        return Ok(Projection::column(c));
    }
    let obj = object(json, "projection")?;
    let alias = obj.get("as").map(|a| string(a, "alias")).transpose()?;
    let item = if let Some(c) = obj.get("col") {
        ProjItem::Column(string(c, "col")?)
    } else if let Some(e) = obj.get("sum") {
        ProjItem::Sum(expr_from_json(e)?)
    } else {
        return Err(parse_err("projection must be a column or {\"sum\": expr}"));
    };
    Ok(Projection { item, alias })
}

fn assignment_from_json(json: &Json) -> Result<Assignment, ModelError> {
    let obj = object(json, "assignment")?;
    Ok(Assignment::new(
        string_field(obj, "set")?,
        expr_from_json(obj.get("to").ok_or_else(|| parse_err("assignment requires to"))?)?,
    ))
}

pub fn statement_from_json(json: &Json) -> Result<Statement, ModelError> {
    let obj = object(json, "statement")?;
    let kind: StatementKind = serde_json::from_value(obj.get("kind").cloned().unwrap_or(Json::Null))
        .map_err(|_| parse_err("kind must be select, insert, update or delete"))?;
    let list = |key: &str| obj.get(key).and_then(Json::as_array).map(Vec::as_slice).unwrap_or(&[]);
    let flag = |key: &str| obj.get(key).and_then(Json::as_bool).unwrap_or(false);
    let set = |key: &str| -> Result<_, ModelError> {
        match obj.get(key) {
            Some(v) => Ok(strings(v, key)?.into_iter().collect()),
            None => Err(parse_err(format!("missing {key}"))),
        }
    };
    Ok(Statement {
        kind,
        table: string_field(obj, "table")?,
        projection: list("projection").iter().map(projection_from_json).collect::<Result<_, _>>()?,
        group_by: list("group_by").iter().map(|g| string(g, "group_by")).collect::<Result<_, _>>()?,
        predicate: obj.get("predicate").map(predicate_from_json).transpose()?,
        assignments: list("assignments").iter().map(assignment_from_json).collect::<Result<_, _>>()?,
        columns: list("columns").iter().map(|c| string(c, "columns")).collect::<Result<_, _>>()?,
        rows: list("rows")
            .iter()
            .map(|r| {
                r.as_array()
                    .ok_or_else(|| parse_err("row must be a list"))?
                    .iter()
                    .map(operand_from_json)
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?,
        for_update: flag("for_update"),
        reads: set("reads")?,
        writes: set("writes")?,
        distinct_key: flag("distinct_key"),
        writes_all_columns: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"{"tables":[{"name":"t","columns":[
        {"name":"id","type":"int","primary_key":true},
        {"name":"value","type":"int"}]}]}"#;

    fn schema() -> Schema {
        Schema::from_json_str(SCHEMA).unwrap()
    }

    #[test]
    fn parses_minimal_template() {
        let t = build_template(
            r#"{"name":"bump","partition_key":["id"],"statements":[
                {"kind":"select","table":"t","projection":["value"],
                 "predicate":{"eq":["id","?id"]},"for_update":true,
                 "reads":["id","value"],"writes":[]},
                {"kind":"update","table":"t",
                 "assignments":[{"set":"value","to":{"add":[{"col":"value"},1]}}],
                 "predicate":{"eq":["id","?id"]},
                 "reads":["id","value"],"writes":["value"]}]}"#,
            &schema(),
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.statement(1).for_update);
        assert_eq!(t.statement(2).assignments[0].delta(), Some(Value::Int(1)));
    }

    #[test]
    fn empty_statement_list_is_rejected() {
        let err = build_template(r#"{"name":"x","partition_key":[],"statements":[]}"#, &schema());
        assert!(matches!(err, Err(ModelError::Validation(_))));
    }

    #[test]
    fn unknown_column_is_a_schema_error() {
        let err = build_template(
            r#"{"name":"x","statements":[{"kind":"select","table":"t","projection":["nope"],
                "reads":["nope"],"writes":[]}]}"#,
            &schema(),
        );
        assert!(matches!(err, Err(ModelError::Schema(_))), "{err:?}");
    }

    #[test]
    fn delete_writes_every_column() {
        let t = build_template(
            r#"{"name":"x","statements":[{"kind":"delete","table":"t",
                "predicate":{"eq":["id","?id"]},"reads":["id"],"writes":["id"]}]}"#,
            &schema(),
        )
        .unwrap();
        let s = t.statement(1);
        assert!(s.writes_all_columns);
        assert!(s.writes.contains("value"));
    }
}
