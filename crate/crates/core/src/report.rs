//! Evaluation exports: CSV with optional log-transformed columns, and a
//! binned SVG heatmap over two of them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::protocol::{Cell, EvaluationTable};

/// Cells per heatmap axis.
pub const GRID: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBase {
    Ten,
    E,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogColumn {
    pub name: String,
    pub base: LogBase,
}

impl LogColumn {
    pub fn log10(name: impl Into<String>) -> Self {
        LogColumn {
            name: name.into(),
            base: LogBase::Ten,
        }
    }

    pub fn ln(name: impl Into<String>) -> Self {
        LogColumn {
            name: name.into(),
            base: LogBase::E,
        }
    }

    fn apply(&self, v: f64) -> f64 {
        match self.base {
            LogBase::Ten => v.log10(),
            LogBase::E => v.ln(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no column named {0}")]
    UnknownColumn(String),
    #[error("row {row}, column {column}: {value:?} is not a positive real")]
    NotPositive { row: usize, column: String, value: String },
    #[error("row {row}: metric value {value:?} is not a number")]
    BadMetric { row: usize, value: String },
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub rows: usize,
    pub svg: Option<PathBuf>,
}

fn cell_text(cell: &Cell) -> String {
    match cell {
        Cell::Missing => String::new(),
        Cell::Value(v) => v.clone(),
        Cell::Parameters(map) => map
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";"),
    }
}

/// Applies the log transforms. Missing cells stay missing; anything else
/// must parse as a positive real.
pub fn transform(table: &EvaluationTable, log_cols: &[LogColumn]) -> Result<EvaluationTable, ReportError> {
    let idx = log_cols
        .iter()
        .map(|c| table.column_index(&c.name).ok_or_else(|| ReportError::UnknownColumn(c.name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = table.clone();
    for (r, row) in out.rows.iter_mut().enumerate() {
        for (col, &j) in log_cols.iter().zip(&idx) {
            let text = match &row[j] {
                Cell::Missing => continue,
                other => cell_text(other),
            };
            let v = text.trim().parse::<f64>().ok().filter(|v| *v > 0.0 && v.is_finite()).ok_or_else(|| {
                ReportError::NotPositive {
                    row: r,
                    column: col.name.clone(),
                    value: text.clone(),
                }
            })?;
            // Debug formatting keeps a trailing ".0" on integral values.
            row[j] = Cell::Value(format!("{:?}", col.apply(v)));
        }
    }
    Ok(out)
}

/// RFC 4180 CSV with a header row and LF line endings.
pub fn render_csv(table: &EvaluationTable) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&table.columns).expect("in-memory write");
    for row in &table.rows {
        w.write_record(row.iter().map(cell_text)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 cells")
}

/// One filled heatmap cell: grid position and the mean metric of the
/// records that fall into it.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatCell {
    pub i: usize,
    pub j: usize,
    pub mean: f64,
    pub count: usize,
}

/// Bin of `v` on an axis spanning `[min, max]`.
pub fn bin(v: f64, min: f64, max: f64) -> usize {
    if max <= min {
        return 0;
    }
    (((v - min) / (max - min) * GRID as f64).floor() as usize).min(GRID - 1)
}

/// Bins `(x, y, value)` points into the grid. Cells are returned in
/// (i, j) order; means are summed in input order.
pub fn heatmap_cells(points: &[(f64, f64, f64)]) -> Vec<HeatCell> {
    if points.is_empty() {
        return Vec::new();
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let mut sums = vec![(0.0f64, 0usize); GRID * GRID];
    for &(x, y, v) in points {
        let cell = &mut sums[bin(x, xmin, xmax) * GRID + bin(y, ymin, ymax)];
        cell.0 += v;
        cell.1 += 1;
    }
    sums.into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(k, (s, n))| HeatCell {
            i: k / GRID,
            j: k % GRID,
            mean: s / n as f64,
            count: n,
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static SVG 1.1 heatmap. Column `i` runs left to right, row `j` bottom
/// to top; each filled cell carries `data-i`, `data-j` and `data-mean`.
pub fn render_svg(cells: &[HeatCell], x_label: &str, y_label: &str) -> String {
    const SIZE: usize = 20;
    const MARGIN: usize = 40;
    let side = GRID * SIZE;
    let (lo, hi) = cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.mean), hi.max(c.mean)));
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#,
        w = side + 2 * MARGIN
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{side}" height="{side}" fill="#ffffff" stroke="#999999"/>"##
    );
    for c in cells {
        let t = if hi > lo { (c.mean - lo) / (hi - lo) } else { 1.0 };
        // light yellow for low, dark blue for high
        let r = (255.0 - t * 225.0).round() as u8;
        let g = (255.0 - t * 155.0).round() as u8;
        let b = (180.0 - t * 20.0).round() as u8;
        let x = MARGIN + c.i * SIZE;
        let y = MARGIN + (GRID - 1 - c.j) * SIZE;
        let _ = writeln!(
            svg,
            r##"<rect x="{x}" y="{y}" width="{SIZE}" height="{SIZE}" fill="#{r:02x}{g:02x}{b:02x}" data-i="{}" data-j="{}" data-mean="{:?}" data-count="{}"/>"##,
            c.i, c.j, c.mean, c.count
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        MARGIN + side / 2,
        side + MARGIN + 25,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
        MARGIN + side / 2,
        MARGIN + side / 2,
        escape(y_label)
    );
    svg.push_str("</svg>\n");
    svg
}

fn write(path: &Path, text: &str) -> Result<(), ReportError> {
    std::fs::write(path, text).map_err(|e| ReportError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `<out>.svg` next to `out`.
pub fn svg_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".svg");
    PathBuf::from(s)
}

/// Writes the CSV to `out`, and with exactly two log columns also a
/// heatmap of the `value` column to `<out>.svg`.
pub fn export_evaluations(table: &EvaluationTable, log_cols: &[LogColumn], out: &Path) -> Result<ExportSummary, ReportError> {
    let transformed = transform(table, log_cols)?;
    write(out, &render_csv(&transformed))?;
    let svg = if let [x, y] = log_cols {
        let xi = transformed.column_index(&x.name).expect("checked by transform");
        let yi = transformed.column_index(&y.name).expect("checked by transform");
        let vi = transformed
            .column_index("value")
            .ok_or_else(|| ReportError::UnknownColumn("value".into()))?;
        let mut points = Vec::new();
        for (r, row) in transformed.rows.iter().enumerate() {
            let (Some(px), Some(py)) = (row[xi].as_str(), row[yi].as_str()) else {
                continue;
            };
            let value = row[vi].as_str().unwrap_or_default();
            let v = value.parse::<f64>().map_err(|_| ReportError::BadMetric {
                row: r,
                value: value.to_string(),
            })?;
            points.push((px.parse::<f64>().unwrap(), py.parse::<f64>().unwrap(), v));
        }
        let path = svg_path(out);
        write(&path, &render_svg(&heatmap_cells(&points), &x.name, &y.name))?;
        Some(path)
    } else {
        None
    };
    Ok(ExportSummary {
        rows: transformed.rows.len(),
        svg,
    })
}
