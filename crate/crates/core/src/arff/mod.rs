//! The ARFF subset used for dataset payloads, split tables, and prediction
//! files.
//!
//! Supported: `@RELATION`, `@ATTRIBUTE` (numeric/real/integer, nominal,
//! string, date), `@DATA`, `%` comments, the `?` missing marker, quoted
//! values with backslash escapes, and sparse rows. Relational attributes and
//! instance weights are rejected.
//!
//! Output is canonical: upper-case keywords, LF line endings, single-quoted
//! values where quoting is needed, and shortest round-trip numerics.

mod parse;
mod table;
mod write;

use std::collections::HashSet;

use thiserror::Error;

pub use parse::{parse, parse_with_limit};
pub use table::{coerce_table, feature_summary, Column, ColumnData, DataTable};
pub use write::serialize;

/// Inputs larger than this are refused rather than parsed.
pub const MAX_INPUT_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArffError {
    #[error("ARFF parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("ARFF input of {size} bytes exceeds the {limit} byte limit")]
    TooLarge { size: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttributeKind {
    Numeric,
    Nominal(Vec<String>),
    String,
    /// Dates are carried verbatim; the optional format string is kept for
    /// round-tripping only.
    Date(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn numeric(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Numeric,
        }
    }

    pub fn nominal<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Nominal(values.into_iter().map(Into::into).collect()),
        }
    }

    pub fn string(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::String,
        }
    }

    /// Value an omitted sparse cell takes: 0 for numeric, the first declared
    /// value for nominal, the empty string otherwise.
    pub fn sparse_default(&self) -> Value {
        match &self.kind {
            AttributeKind::Numeric => Value::Number(0.0),
            AttributeKind::Nominal(values) => Value::Text(values[0].clone()),
            AttributeKind::String | AttributeKind::Date(_) => Value::Text(String::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Missing,
    Number(f64),
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    Dense(Vec<Value>),
    /// `(attribute index, value)` pairs with strictly increasing indices.
    Sparse(Vec<(usize, Value)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArffDocument {
    pub relation: String,
    pub attributes: Vec<Attribute>,
    pub rows: Vec<Row>,
}

impl ArffDocument {
    pub fn new(relation: impl Into<String>, attributes: Vec<Attribute>) -> Self {
        ArffDocument {
            relation: relation.into(),
            attributes,
            rows: Vec::new(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        self.rows.iter().any(|r| matches!(r, Row::Sparse(_)))
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Row `i` expanded to one cell per attribute.
    pub fn dense_row(&self, i: usize) -> Vec<Value> {
        match &self.rows[i] {
            Row::Dense(cells) => cells.clone(),
            Row::Sparse(entries) => {
                let mut cells: Vec<Value> =
                    self.attributes.iter().map(Attribute::sparse_default).collect();
                for (idx, v) in entries {
                    cells[*idx] = v.clone();
                }
                cells
            }
        }
    }

    /// Copy of the document with every sparse row expanded.
    pub fn densified(&self) -> ArffDocument {
        ArffDocument {
            relation: self.relation.clone(),
            attributes: self.attributes.clone(),
            rows: (0..self.rows.len()).map(|i| Row::Dense(self.dense_row(i))).collect(),
        }
    }

    /// Checks the document invariants; returns every violation found.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut names = HashSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                out.push(format!("attribute name not unique: {}", a.name));
            }
            if let AttributeKind::Nominal(values) = &a.kind {
                if values.is_empty() {
                    out.push(format!("nominal attribute without values: {}", a.name));
                }
                let distinct: HashSet<&String> = values.iter().collect();
                if distinct.len() != values.len() {
                    out.push(format!("nominal values not unique in {}", a.name));
                }
            }
        }
        let width = self.attributes.len();
        for (r, row) in self.rows.iter().enumerate() {
            match row {
                Row::Dense(cells) => {
                    if cells.len() != width {
                        out.push(format!("row {r} has {} cells, expected {width}", cells.len()));
                        continue;
                    }
                    for (a, v) in self.attributes.iter().zip(cells) {
                        if let Err(e) = check_cell(a, v) {
                            out.push(format!("row {r}: {e}"));
                        }
                    }
                }
                Row::Sparse(entries) => {
                    let mut last = None;
                    for (idx, v) in entries {
                        if *idx >= width {
                            out.push(format!("row {r}: sparse index {idx} out of range"));
                            continue;
                        }
                        if last.is_some_and(|l| l >= *idx) {
                            out.push(format!("row {r}: sparse indices not strictly increasing"));
                        }
                        last = Some(*idx);
                        if let Err(e) = check_cell(&self.attributes[*idx], v) {
                            out.push(format!("row {r}: {e}"));
                        }
                    }
                }
            }
        }
        out
    }
}

fn check_cell(attr: &Attribute, value: &Value) -> Result<(), String> {
    match (&attr.kind, value) {
        (_, Value::Missing) => Ok(()),
        (AttributeKind::Numeric, Value::Number(v)) if v.is_finite() => Ok(()),
        (AttributeKind::Nominal(values), Value::Text(s)) if values.contains(s) => Ok(()),
        (AttributeKind::String | AttributeKind::Date(_), Value::Text(_)) => Ok(()),
        _ => Err(format!("invalid cell {value:?} for attribute {}", attr.name)),
    }
}
