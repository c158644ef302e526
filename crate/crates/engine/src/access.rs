//! Access-path selection: which primary keys a predicate can possibly match.

use txmerge_core::{ColumnType, Operand, Predicate, Value};

/// Keys to visit for a statement. Points are full primary keys, prefixes are
/// leading primary-key components to range-scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Access {
    Keys { points: Vec<Vec<Value>>, prefixes: Vec<Vec<Value>> },
    Scan,
}

type Binding = Vec<Option<Value>>;

/// Above this many conjunctive combinations the planner gives up and scans.
const PRODUCT_LIMIT: usize = 4096;

pub fn plan_access(pred: Option<&Predicate>, pk: &[(&str, ColumnType)]) -> Access {
    let Some(pred) = pred else { return Access::Scan };
    let mut points = Vec::new();
    let mut prefixes = Vec::new();
    for b in bindings(pred, pk) {
        let k = b.iter().take_while(|v| v.is_some()).count();
        let lead: Vec<Value> = b.into_iter().take(k).map(|v| v.expect("leading component")).collect();
        if k == pk.len() {
            points.push(lead);
        } else if k > 0 {
            prefixes.push(lead);
        } else {
            return Access::Scan;
        }
    }
    points.sort();
    points.dedup();
    prefixes.sort();
    prefixes.dedup();
    Access::Keys { points, prefixes }
}

fn universal(pk: &[(&str, ColumnType)]) -> Binding {
    vec![None; pk.len()]
}

/// Coerces a literal to the key column type; `None` when it can never match.
fn key_value(v: &Value, ty: ColumnType) -> Option<Value> {
    if v.is_null() {
        return None;
    }
    v.coerce(ty)
}

fn bindings(pred: &Predicate, pk: &[(&str, ColumnType)]) -> Vec<Binding> {
    let pos = |c: &str| pk.iter().position(|(name, _)| *name == c);
    match pred {
        Predicate::Eq(c, Operand::Value(v)) => match pos(c) {
            Some(p) => match key_value(v, pk[p].1) {
                Some(v) => {
                    let mut b = universal(pk);
                    b[p] = Some(v);
                    vec![b]
                }
                None => vec![],
            },
            None => vec![universal(pk)],
        },
        Predicate::Eq(..) => vec![universal(pk)],
        Predicate::In(c, ops) => {
            let Some(p) = pos(c) else { return vec![universal(pk)] };
            let mut out = Vec::new();
            for op in ops {
                let Operand::Value(v) = op else { return vec![universal(pk)] };
                if let Some(v) = key_value(v, pk[p].1) {
                    let mut b = universal(pk);
                    b[p] = Some(v);
                    out.push(b);
                }
            }
            out
        }
        Predicate::TupleIn(cols, rows) => {
            let mut out = Vec::new();
            'rows: for row in rows {
                let mut b = universal(pk);
                for (c, op) in cols.iter().zip(row) {
                    let Operand::Value(v) = op else { return vec![universal(pk)] };
                    if let Some(p) = pos(c) {
                        match key_value(v, pk[p].1) {
                            Some(v) => b[p] = Some(v),
                            None => continue 'rows,
                        }
                    }
                }
                out.push(b);
            }
            out
        }
        Predicate::And(ps) => {
            let mut acc = vec![universal(pk)];
            for p in ps {
                let child = bindings(p, pk);
                let mut next = Vec::new();
                for a in &acc {
                    for b in &child {
                        if let Some(m) = merge(a, b) {
                            next.push(m);
                        }
                    }
                }
                if next.len() > PRODUCT_LIMIT {
                    return vec![universal(pk)];
                }
                acc = next;
            }
            acc
        }
        Predicate::Or(ps) => ps.iter().flat_map(|p| bindings(p, pk)).collect(),
    }
}

/// True when point keys planned by `plan_access` (with no prefixes) are exactly the rows `pred`
/// matches: every leaf compares a primary-key column with a literal already
/// of that column's type, so re-evaluating the predicate per row is moot.
pub fn key_exact(pred: &Predicate, pk: &[(&str, ColumnType)]) -> bool {
    let literal = |c: &str, op: &Operand| {
        let Some(&(_, ty)) = pk.iter().find(|(name, _)| *name == c) else { return false };
        match op {
            Operand::Value(v) => v.is_null() || v.coerce(ty).as_ref() == Some(v),
            _ => false,
        }
    };
    match pred {
        Predicate::Eq(c, op) => literal(c, op),
        Predicate::In(c, ops) => ops.iter().all(|op| literal(c, op)),
        Predicate::TupleIn(cols, rows) => rows.iter().all(|r| cols.iter().zip(r).all(|(c, op)| literal(c, op))),
        Predicate::And(ps) | Predicate::Or(ps) => ps.iter().all(|p| key_exact(p, pk)),
    }
}

fn merge(a: &Binding, b: &Binding) -> Option<Binding> {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) if x != y => Err(()),
            (Some(x), _) | (None, Some(x)) => Ok(Some(x.clone())),
            (None, None) => Ok(None),
        })
        .collect::<Result<Binding, ()>>()
        .ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PK: [(&str, ColumnType); 2] = [("w", ColumnType::Int), ("d", ColumnType::Int)];

    fn keys(p: &Predicate) -> Access {
        plan_access(Some(p), &PK)
    }

    fn eq(c: &str, v: i64) -> Predicate {
        Predicate::eq(c, Value::Int(v))
    }

    #[test]
    fn full_key_conjunction_is_a_point() {
        let a = keys(&Predicate::And(vec![eq("w", 1), eq("d", 2)]));
        assert_eq!(a, Access::Keys { points: vec![vec![Value::Int(1), Value::Int(2)]], prefixes: vec![] });
    }

    #[test]
    fn leading_component_is_a_prefix_and_trailing_alone_scans() {
        assert_eq!(keys(&eq("w", 1)), Access::Keys { points: vec![], prefixes: vec![vec![Value::Int(1)]] });
        assert_eq!(keys(&eq("d", 1)), Access::Scan);
        assert_eq!(plan_access(None, &PK), Access::Scan);
    }

    #[test]
    fn in_lists_expand_against_constant_columns() {
        let p = Predicate::And(vec![
            eq("w", 1),
            Predicate::In("d".into(), vec![Operand::value(3), Operand::value(7), Operand::value(3)]),
        ]);
        let Access::Keys { points, .. } = keys(&p) else { panic!() };
        assert_eq!(points.len(), 2);
    }

    #[test]
    fn contradictions_and_nulls_visit_nothing() {
        let p = Predicate::And(vec![eq("w", 1), eq("w", 2), eq("d", 1)]);
        assert_eq!(keys(&p), Access::Keys { points: vec![], prefixes: vec![] });
        let p = Predicate::And(vec![Predicate::eq("w", Value::Null), eq("d", 1)]);
        assert_eq!(keys(&p), Access::Keys { points: vec![], prefixes: vec![] });
    }

    #[test]
    fn disjunction_with_a_non_key_branch_scans() {
        let p = Predicate::Or(vec![Predicate::And(vec![eq("w", 1), eq("d", 1)]), eq("x", 2)]);
        assert_eq!(keys(&p), Access::Scan);
    }

    #[test]
    fn exactness_requires_typed_key_literals() {
        let p = Predicate::And(vec![eq("w", 1), Predicate::In("d".into(), vec![Operand::value(3)])]);
        assert!(key_exact(&p, &PK));
        assert!(!key_exact(&Predicate::And(vec![eq("w", 1), eq("x", 2)]), &PK));
        assert!(!key_exact(&Predicate::eq("w", Value::Str("1".into())), &PK));
    }

    #[test]
    fn tuple_in_yields_points() {
        let p = Predicate::TupleIn(
            vec!["w".into(), "d".into()],
            vec![vec![Operand::value(1), Operand::value(3)], vec![Operand::value(2), Operand::value(7)]],
        );
        let Access::Keys { points, .. } = keys(&p) else { panic!() };
        assert_eq!(points, vec![vec![Value::Int(1), Value::Int(3)], vec![Value::Int(2), Value::Int(7)]]);
    }
}
