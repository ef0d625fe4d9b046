use std::fmt::Write as _;

use super::{ArffDocument, AttributeKind, Row, Value};

/// Renders a document in canonical form. The input must satisfy
/// [`ArffDocument::validate`]; the output then reparses to an equal document.
pub fn serialize(doc: &ArffDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "@RELATION {}", quote(&doc.relation));
    out.push('\n');
    for attr in &doc.attributes {
        let kind = match &attr.kind {
            AttributeKind::Numeric => "NUMERIC".to_string(),
            AttributeKind::String => "STRING".to_string(),
            AttributeKind::Date(None) => "DATE".to_string(),
            AttributeKind::Date(Some(fmt)) => format!("DATE {}", force_quote(fmt)),
            AttributeKind::Nominal(values) => {
                let items: Vec<String> = values.iter().map(|v| quote(v)).collect();
                format!("{{{}}}", items.join(","))
            }
        };
        let _ = writeln!(out, "@ATTRIBUTE {} {kind}", quote(&attr.name));
    }
    out.push('\n');
    out.push_str("@DATA\n");
    for row in &doc.rows {
        match row {
            Row::Dense(cells) => {
                for (i, v) in cells.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write_value(&mut out, v);
                }
            }
            Row::Sparse(entries) => {
                out.push('{');
                for (i, (idx, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{idx} ");
                    write_value(&mut out, v);
                }
                out.push('}');
            }
        }
        out.push('\n');
    }
    out
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Missing => out.push('?'),
        // `Display` for f64 is the shortest representation that round-trips.
        Value::Number(x) => {
            let _ = write!(out, "{x}");
        }
        Value::Text(s) => out.push_str(&quote(s)),
    }
}

fn needs_quoting(s: &str) -> bool {
    s.is_empty()
        || s == "?"
        || s.chars().any(|c| {
            c.is_whitespace()
                || c.is_control()
                || matches!(c, ',' | '\'' | '"' | '%' | '{' | '}' | '\\')
        })
}

/// Single-quotes `s` when it would otherwise be ambiguous.
pub(crate) fn quote(s: &str) -> String {
    if needs_quoting(s) {
        force_quote(s)
    } else {
        s.to_string()
    }
}

fn force_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}
