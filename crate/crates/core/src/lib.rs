//! Statement model, conflict analysis, merge rewriting and routing for
//! batched transaction execution.

pub mod analyzer;
pub mod error;
pub mod expr;
pub mod partition;
pub mod render;
pub mod result;
pub mod rewrite;
pub mod schema;
pub mod statement;
pub mod template;
pub mod value;

pub use error::{EvalError, InternalError, MergeError, ModelError, PolicyError};
pub use expr::{Assignment, Expr, Operand, Predicate, ProjItem, Projection, RowAccess};
pub use render::{render, render_sql, Dialect};
pub use result::ResultSet;
pub use schema::{ColumnDef, Schema, TableSchema};
pub use statement::{AccessSets, Statement, StatementKind};
pub use template::{build_template, Dataflow, TransactionTemplate};
pub use rewrite::{plan_batch, DispatchMap, MergedPlan, PlannedStatement, Rewriter};
pub use value::{ColumnType, Decimal, Value};
