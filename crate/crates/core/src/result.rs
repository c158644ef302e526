
use crate::expr::RowAccess;
use crate::value::Value;

/// Rows returned by a statement, or the affected-row count of DML.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub affected: u64,
}

impl ResultSet {
    pub fn new(columns: Vec<String>) -> Self {
        ResultSet { columns, rows: Vec::new(), affected: 0 }
    }

    pub fn affected(n: u64) -> Self {
        ResultSet { affected: n, ..Default::default() }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Value of `column` in row `row`.
    pub fn get(&self, row: usize, column: &str) -> Option<&Value> {
        self.column_index(column).and_then(|i| self.rows.get(row).map(|r| &r[i]))
    }

    pub fn first(&self, column: &str) -> Option<&Value> {
        self.get(0, column)
    }

    pub fn row(&self, index: usize) -> RowView<'_> {
        RowView { columns: &self.columns, values: &self.rows[index] }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A result row addressable by column name.
pub struct RowView<'a> {
    pub columns: &'a [String],
    pub values: &'a [Value],
}

impl RowAccess for RowView<'_> {
    fn get(&self, column: &str) -> Option<&Value> {
        self.columns.iter().position(|c| c == column).map(|i| &self.values[i])
    }
}
