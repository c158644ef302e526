//! Table schemas.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::value::ColumnType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    #[serde(default)]
    pub primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Primary-key column names in declaration order.
    pub fn primary_key(&self) -> Vec<&str> {
        self.columns.iter().filter(|c| c.primary_key).map(|c| c.name.as_str()).collect()
    }

    pub fn primary_key_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.primary_key)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<TableSchema>,
}

impl Schema {
    pub fn from_json_str(text: &str) -> Result<Schema, ModelError> {
        let schema: Schema = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        schema.check()?;
        Ok(schema)
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn require_table(&self, name: &str) -> Result<&TableSchema, ModelError> {
        self.table(name).ok_or_else(|| ModelError::Schema(format!("unknown table {name}")))
    }

    /// Merges another schema's tables into this one; duplicate names are an error.
    pub fn extend(&mut self, other: Schema) -> Result<(), ModelError> {
        for t in other.tables {
            if self.table(&t.name).is_some() {
                return Err(ModelError::Schema(format!("duplicate table {}", t.name)));
            }
            self.tables.push(t);
        }
        self.check()
    }

    fn check(&self) -> Result<(), ModelError> {
        let mut names = HashMap::new();
        for t in &self.tables {
            if names.insert(t.name.as_str(), ()).is_some() {
                return Err(ModelError::Schema(format!("duplicate table {}", t.name)));
            }
            if t.primary_key().is_empty() {
                return Err(ModelError::Schema(format!("table {} has no primary key", t.name)));
            }
            let mut cols = HashMap::new();
            for c in &t.columns {
                if cols.insert(c.name.as_str(), ()).is_some() {
                    return Err(ModelError::Schema(format!("duplicate column {}.{}", t.name, c.name)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_schema_file_shape() {
        let s = Schema::from_json_str(
            r#"{"tables":[{"name":"t","columns":[
                {"name":"id","type":"int","primary_key":true},
                {"name":"value","type":"decimal"}]}]}"#,
        )
        .unwrap();
        let t = s.table("t").unwrap();
        assert_eq!(t.primary_key(), vec!["id"]);
        assert_eq!(t.column("value").unwrap().ty, ColumnType::Decimal);
    }

    #[test]
    fn rejects_table_without_key() {
        let err = Schema::from_json_str(r#"{"tables":[{"name":"t","columns":[{"name":"a","type":"int"}]}]}"#);
        assert!(matches!(err, Err(ModelError::Schema(_))));
    }
}
