//! Conflict-group analysis.
//!
//! Two statements conflict when they touch a common column of the same
//! table and at least one of them writes it. Statements are partitioned
//! into contiguous groups closed under conflicts; instances of the same
//! transaction can then be interleaved group by group.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Serialize;

use crate::error::InternalError;
use crate::statement::{Statement, StatementKind};
use crate::template::TransactionTemplate;

/// Columns on which `a` and `b` conflict; empty when they do not.
pub fn conflict_columns(a: &Statement, b: &Statement) -> Vec<String> {
    if a.table != b.table {
        return Vec::new();
    }
    let insert_vs_query = |x: &Statement, y: &Statement| {
        x.kind == StatementKind::Insert && y.kind == StatementKind::Select
    };
    if insert_vs_query(a, b) || insert_vs_query(b, a) {
        return Vec::new();
    }
    if a.distinct_key && b.distinct_key {
        return Vec::new();
    }
    let ta: BTreeSet<&String> = a.reads.iter().chain(&a.writes).collect();
    let tb: BTreeSet<&String> = b.reads.iter().chain(&b.writes).collect();
    let mut out: BTreeSet<&String> = a.writes.iter().filter(|c| tb.contains(c)).collect();
    out.extend(b.writes.iter().filter(|c| ta.contains(c)));
    out.into_iter().cloned().collect()
}

pub fn conflicts(a: &Statement, b: &Statement) -> bool {
    !conflict_columns(a, b).is_empty()
}

/// Partitions `0..n` into contiguous intervals such that no conflicting
/// pair spans two intervals. Intervals are returned 1-based and inclusive.
pub fn group_by_conflicts(n: usize, conflict: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let mut bounds: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    loop {
        let group_of = |bounds: &[(usize, usize)], i: usize| bounds.iter().position(|&(lo, hi)| lo <= i && i <= hi).expect("covered");
        let mut merged = false;
        'scan: for i in 0..n {
            for j in i + 1..n {
                let (gi, gj) = (group_of(&bounds, i), group_of(&bounds, j));
                if gi != gj && conflict(i, j) {
                    let lo = bounds[gi].0;
                    let hi = bounds[gj].1;
                    bounds.drain(gi..=gj);
                    bounds.insert(gi, (lo, hi));
                    merged = true;
                    break 'scan;
                }
            }
        }
        if !merged {
            break;
        }
    }
    bounds.into_iter().map(|(lo, hi)| (lo + 1, hi + 1)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GroupClass {
    MergeableSingleton,
    SequentialGroup,
}

/// A conflicting statement pair (1-based, `a <= b`) and the shared columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub a: usize,
    pub b: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeGroup {
    pub lo: usize,
    pub hi: usize,
    pub class: GroupClass,
    /// The template carries a hand-written merged form for this group.
    pub developer_merged: bool,
    pub witnesses: Vec<Witness>,
}

impl MergeGroup {
    pub fn members(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn contains(&self, i: usize) -> bool {
        self.lo <= i && i <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeGroupReport {
    pub transaction: String,
    pub groups: Vec<MergeGroup>,
    /// Every conflicting pair, including a statement with itself.
    pub edges: Vec<Witness>,
    /// Deletes analysed as writing every column of their table.
    pub widened_deletes: Vec<usize>,
}

impl MergeGroupReport {
    pub fn group_of(&self, index: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(index))
    }

    /// Non-singleton groups as `(lo, hi)` pairs.
    pub fn multi_groups(&self) -> Vec<(usize, usize)> {
        self.groups.iter().filter(|g| g.lo < g.hi).map(|g| (g.lo, g.hi)).collect()
    }

    /// `{groups:[{lo,hi,witnesses}]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "transaction": self.transaction,
            "groups": self.groups.iter().map(|g| serde_json::json!({
                "lo": g.lo,
                "hi": g.hi,
                "class": g.class,
                "developer_merged": g.developer_merged,
                "witnesses": g.witnesses.iter().map(|w| serde_json::json!([w.a, w.b, w.columns])).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn to_table(&self, template: &TransactionTemplate) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<20} {:<9} conflicts", "group", "class", "merged");
        for g in &self.groups {
            let range = if g.lo == g.hi { g.lo.to_string() } else { format!("{}-{}", g.lo, g.hi) };
            let class = match g.class {
                GroupClass::MergeableSingleton => "singleton",
                GroupClass::SequentialGroup => "sequential",
            };
            let conflicts: Vec<String> =
                g.witnesses.iter().map(|w| format!("{}~{} ({})", w.a, w.b, w.columns.join(","))).collect();
            let _ = writeln!(
                out,
                "{range:<8} {class:<20} {:<9} {}",
                if g.developer_merged { "yes" } else { "" },
                conflicts.join("; ")
            );
        }
        for i in 1..=template.len() {
            let s = template.statement(i);
            let _ = writeln!(out, "  {i:>2}: {} {}", s.kind.as_str(), s.table);
        }
        out
    }
}

pub fn group(template: &TransactionTemplate) -> MergeGroupReport {
    group_statements(&template.name, &template.statements, &template.merged_groups)
}

pub fn group_statements(name: &str, statements: &[Statement], merged_groups: &[(usize, usize)]) -> MergeGroupReport {
    let n = statements.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i..n {
            let columns = conflict_columns(&statements[i], &statements[j]);
            if !columns.is_empty() {
                edges.push(Witness { a: i + 1, b: j + 1, columns });
            }
        }
    }
    let bounds = group_by_conflicts(n, |i, j| edges.iter().any(|w| w.a == i + 1 && w.b == j + 1));
    let groups = bounds
        .into_iter()
        .map(|(lo, hi)| MergeGroup {
            lo,
            hi,
            class: if lo == hi { GroupClass::MergeableSingleton } else { GroupClass::SequentialGroup },
            developer_merged: merged_groups.contains(&(lo, hi)),
            witnesses: edges
                .iter()
                .filter(|w| w.a != w.b && lo <= w.a && w.b <= hi)
                .cloned()
                .collect(),
        })
        .collect();
    MergeGroupReport {
        transaction: name.to_string(),
        groups,
        edges,
        widened_deletes: statements
            .iter()
            .enumerate()
            .filter(|(_, s)| s.writes_all_columns)
            .map(|(i, _)| i + 1)
            .collect(),
    }
}

/// One step of the two-instance schedule: instance `instance` runs
/// statements `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleStep {
    pub instance: u8,
    pub lo: usize,
    pub hi: usize,
}

/// A conflict edge between statement `from_stmt` of instance `from` and
/// `to_stmt` of the other instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: u8,
    pub from_stmt: usize,
    pub to_stmt: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InterleavingProof {
    pub schedule: Vec<ScheduleStep>,
    pub edges: Vec<Edge>,
    pub note: String,
}

/// Instantiates the dependency-graph argument for two instances executed as
/// `G1¹ G1² G2¹ G2² ...`: every conflict edge must point from instance 1 to
/// instance 2.
pub fn verify_interleaving(report: &MergeGroupReport) -> Result<InterleavingProof, InternalError> {
    let mut schedule = Vec::with_capacity(report.groups.len() * 2);
    for (k, g) in report.groups.iter().enumerate() {
        if k == 0 && g.lo != 1 || k > 0 && g.lo != report.groups[k - 1].hi + 1 || g.lo > g.hi {
            return Err(InternalError(format!("groups do not tile the statements at {}-{}", g.lo, g.hi)));
        }
        schedule.push(ScheduleStep { instance: 1, lo: g.lo, hi: g.hi });
        schedule.push(ScheduleStep { instance: 2, lo: g.lo, hi: g.hi });
    }
    let position = |instance: u8, stmt: usize| -> Result<usize, InternalError> {
        schedule
            .iter()
            .position(|s| s.instance == instance && s.lo <= stmt && stmt <= s.hi)
            .ok_or_else(|| InternalError(format!("statement {stmt} outside every group")))
    };
    let mut edges = Vec::new();
    for w in &report.edges {
        // Both orientations: statement a of one instance against b of the other.
        for (x, y) in [(w.a, w.b), (w.b, w.a)] {
            let p1 = position(1, x)?;
            let p2 = position(2, y)?;
            let edge = if p1 < p2 || (p1 == p2 && x <= y) {
                Edge { from: 1, from_stmt: x, to_stmt: y }
            } else {
                Edge { from: 2, from_stmt: y, to_stmt: x }
            };
            if edge.from != 1 {
                return Err(InternalError(format!(
                    "conflict between statements {} and {} on {} crosses groups",
                    w.a,
                    w.b,
                    w.columns.join(", ")
                )));
            }
            if !edges.contains(&edge) {
                edges.push(edge);
            }
        }
    }
    let note = format!(
        "{}: {} groups, schedule {}; {} conflict edges, all from instance 1 to instance 2, so the \
         dependency graph is acyclic and the interleaving is equivalent to running instance 1 then instance 2",
        report.transaction,
        report.groups.len(),
        schedule
            .iter()
            .map(|s| if s.lo == s.hi { format!("{{{}}}{}", s.lo, s.instance) } else { format!("{{{}-{}}}{}", s.lo, s.hi, s.instance) })
            .collect::<Vec<_>>()
            .join(" "),
        edges.len()
    );
    Ok(InterleavingProof { schedule, edges, note })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Assignment, Expr, Operand, Predicate};
    use proptest::prelude::*;

    fn read(table: &str, cols: &[&str]) -> Statement {
        Statement::select_columns(table, cols).filter(Predicate::eq_param("id", "id"))
    }

    fn write(table: &str, col: &str) -> Statement {
        Statement::update(table, vec![Assignment::new(col, Expr::param("v"))]).filter(Predicate::eq_param("id", "id"))
    }

    #[test]
    fn read_write_on_same_column_conflicts() {
        assert!(conflicts(&read("t", &["a"]), &write("t", "a")));
        assert!(!conflicts(&read("t", &["a"]), &read("t", &["a"])));
        assert!(!conflicts(&read("t", &["a"]), &write("u", "a")));
        assert_eq!(conflict_columns(&read("t", &["a"]), &write("t", "a")), vec!["a".to_string()]);
    }

    #[test]
    fn insert_versus_query_is_not_a_conflict() {
        let ins = Statement::insert("t", &["id", "a"], vec![vec![Operand::param("id"), Operand::param("a")]]);
        assert!(!conflicts(&ins, &read("t", &["a"])));
        assert!(conflicts(&ins, &write("t", "a")));
    }

    #[test]
    fn distinct_keys_suppress_conflict() {
        let a = write("t", "a").distinct_key();
        let b = read("t", &["a"]).distinct_key();
        assert!(!conflicts(&a, &b));
        assert!(conflicts(&a, &read("t", &["a"])));
    }

    #[test]
    fn gap_between_conflicting_statements_is_absorbed() {
        let stmts = vec![read("t", &["a"]), read("u", &["x"]), write("t", "a"), read("v", &["y"])];
        let r = group_statements("x", &stmts, &[]);
        let bounds: Vec<_> = r.groups.iter().map(|g| (g.lo, g.hi)).collect();
        assert_eq!(bounds, vec![(1, 3), (4, 4)]);
        assert_eq!(r.groups[0].class, GroupClass::SequentialGroup);
        assert_eq!(r.groups[0].witnesses.len(), 1);
    }

    #[test]
    fn nonconflicting_statements_stay_singletons() {
        let stmts = vec![read("t", &["a"]), read("t", &["b"]), write("t", "c"), write("u", "a")];
        let r = group_statements("x", &stmts, &[]);
        assert_eq!(r.groups.len(), 4);
        assert!(r.groups.iter().all(|g| g.class == GroupClass::MergeableSingleton));
        let proof = verify_interleaving(&r).unwrap();
        assert_eq!(proof.schedule.len(), 8);
    }

    #[test]
    fn corrupted_report_is_an_internal_error() {
        let stmts = vec![read("t", &["a"]), write("t", "a")];
        let mut r = group_statements("x", &stmts, &[]);
        assert!(verify_interleaving(&r).is_ok());
        r.groups = vec![
            MergeGroup { lo: 1, hi: 1, class: GroupClass::MergeableSingleton, developer_merged: false, witnesses: vec![] },
            MergeGroup { lo: 2, hi: 2, class: GroupClass::MergeableSingleton, developer_merged: false, witnesses: vec![] },
        ];
        assert!(verify_interleaving(&r).is_err());
    }

    fn matrix(n: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
        proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n)
    }

    fn symmetric(m: &[Vec<bool>]) -> impl Fn(usize, usize) -> bool + '_ {
        move |i, j| m[i.min(j)][i.max(j)]
    }

    proptest! {
        #[test]
        fn groups_tile_and_separate_conflicts(m in matrix(8)) {
            let bounds = group_by_conflicts(8, symmetric(&m));
            prop_assert_eq!(bounds[0].0, 1);
            prop_assert_eq!(bounds.last().unwrap().1, 8);
            for w in bounds.windows(2) {
                prop_assert_eq!(w[0].1 + 1, w[1].0);
            }
            let g = |i: usize| bounds.iter().position(|&(lo, hi)| lo <= i + 1 && i < hi).unwrap();
            for i in 0..8 {
                for j in i + 1..8 {
                    if m[i][j] {
                        prop_assert_eq!(g(i), g(j));
                    }
                }
            }
        }

        #[test]
        fn adding_a_conflict_never_adds_groups(m in matrix(7), i in 0usize..7, j in 0usize..7) {
            let before = group_by_conflicts(7, symmetric(&m)).len();
            let mut m2 = m.clone();
            m2[i.min(j)][i.max(j)] = true;
            let after = group_by_conflicts(7, symmetric(&m2)).len();
            prop_assert!(after <= before);
        }

        #[test]
        fn grouping_is_idempotent(m in matrix(7)) {
            let bounds = group_by_conflicts(7, symmetric(&m));
            // Conflicts induced by the grouping itself: every pair within a group.
            let same = |i: usize, j: usize| bounds.iter().any(|&(lo, hi)| lo <= i + 1 && j < hi);
            prop_assert_eq!(group_by_conflicts(7, same), bounds);
        }
    }
}
