use crate::entities::{Feature, FeatureKind};

use super::{ArffDocument, AttributeKind, Value};

/// Typed column storage; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Real(Vec<Option<f64>>),
    /// Codes index into `categories`.
    Categorical {
        codes: Vec<Option<u32>>,
        categories: Vec<String>,
    },
    Text(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: FeatureKind,
    pub data: ColumnData,
}

impl Column {
    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Real(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.data {
            ColumnData::Real(v) => v[row].is_none(),
            ColumnData::Categorical { codes, .. } => codes[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }

    /// Category label of `row`, for categorical columns.
    pub fn label(&self, row: usize) -> Option<&str> {
        match &self.data {
            ColumnData::Categorical { codes, categories } => {
                codes[row].map(|c| categories[c as usize].as_str())
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub columns: Vec<Column>,
    pub row_count: usize,
}

impl DataTable {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Converts a (valid) document into typed columns, densifying sparse rows.
pub fn coerce_table(doc: &ArffDocument) -> DataTable {
    let n = doc.rows.len();
    let dense: Vec<Vec<Value>> = (0..n).map(|i| doc.dense_row(i)).collect();
    let columns = doc
        .attributes
        .iter()
        .enumerate()
        .map(|(j, attr)| {
            let cells = dense.iter().map(|row| &row[j]);
            let (kind, data) = match &attr.kind {
                AttributeKind::Numeric => (
                    FeatureKind::Numeric,
                    ColumnData::Real(cells.map(Value::as_number).collect()),
                ),
                AttributeKind::Nominal(values) => (
                    FeatureKind::Nominal,
                    ColumnData::Categorical {
                        codes: cells
                            .map(|v| {
                                v.as_text()
                                    .and_then(|s| values.iter().position(|x| x == s))
                                    .map(|p| p as u32)
                            })
                            .collect(),
                        categories: values.clone(),
                    },
                ),
                AttributeKind::String | AttributeKind::Date(_) => (
                    if matches!(attr.kind, AttributeKind::String) {
                        FeatureKind::String
                    } else {
                        FeatureKind::Date
                    },
                    ColumnData::Text(cells.map(|v| v.as_text().map(str::to_string)).collect()),
                ),
            };
            Column {
                name: attr.name.clone(),
                kind,
                data,
            }
        })
        .collect();
    DataTable {
        columns,
        row_count: n,
    }
}

/// Feature metadata (kinds, nominal values, missing counts) of a document.
pub fn feature_summary(doc: &ArffDocument) -> Vec<Feature> {
    let table = coerce_table(doc);
    doc.attributes
        .iter()
        .zip(&table.columns)
        .enumerate()
        .map(|(index, (attr, col))| Feature {
            index,
            name: attr.name.clone(),
            kind: col.kind,
            nominal_values: match &attr.kind {
                AttributeKind::Nominal(values) => values.clone(),
                _ => Vec::new(),
            },
            missing_count: col.missing_count() as u64,
        })
        .collect()
}
