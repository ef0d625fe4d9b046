use std::collections::HashSet;

use super::{ArffDocument, ArffError, Attribute, AttributeKind, Row, Value, MAX_INPUT_BYTES};

/// Parses ARFF text into a document that satisfies every document
/// invariant, or fails with the position of the first problem.
pub fn parse(text: &str) -> Result<ArffDocument, ArffError> {
    parse_with_limit(text, MAX_INPUT_BYTES)
}

pub fn parse_with_limit(text: &str, limit: usize) -> Result<ArffDocument, ArffError> {
    if text.len() > limit {
        return Err(ArffError::TooLarge {
            size: text.len(),
            limit,
        });
    }
    let mut relation: Option<String> = None;
    let mut attributes: Vec<Attribute> = Vec::new();
    let mut names = HashSet::new();
    let mut rows = Vec::new();
    let mut in_data = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut cur = Cursor::new(raw, line_no);
        cur.skip_ws();
        if cur.at_end_or_comment() {
            continue;
        }
        if in_data {
            rows.push(parse_row(&mut cur, &attributes)?);
            continue;
        }
        if cur.peek() != Some('@') {
            return Err(cur.error("expected a header directive"));
        }
        cur.bump();
        let keyword = cur.read_word().to_ascii_lowercase();
        match keyword.as_str() {
            "relation" => {
                if relation.is_some() {
                    return Err(cur.error("duplicate @RELATION"));
                }
                cur.skip_ws();
                let (name, _) = cur.read_token(&[])?;
                if name.is_empty() {
                    return Err(cur.error("missing relation name"));
                }
                cur.expect_end()?;
                relation = Some(name);
            }
            "attribute" => {
                if relation.is_none() {
                    return Err(cur.error("@ATTRIBUTE before @RELATION"));
                }
                cur.skip_ws();
                let col = cur.column();
                let (name, _) = cur.read_token(&[])?;
                if name.is_empty() {
                    return Err(cur.error("missing attribute name"));
                }
                let kind = parse_kind(&mut cur)?;
                if !names.insert(name.clone()) {
                    return Err(ArffError::Parse {
                        line: line_no,
                        column: col,
                        message: format!("duplicate attribute name: {name}"),
                    });
                }
                attributes.push(Attribute { name, kind });
            }
            "data" => {
                if relation.is_none() {
                    return Err(cur.error("@DATA before @RELATION"));
                }
                cur.expect_end()?;
                in_data = true;
            }
            "end" => return Err(cur.error("relational attributes are not supported")),
            other => return Err(cur.error(&format!("unknown directive @{other}"))),
        }
    }

    let Some(relation) = relation else {
        return Err(ArffError::Parse {
            line: 1,
            column: 1,
            message: "missing @RELATION".into(),
        });
    };
    if !in_data {
        return Err(ArffError::Parse {
            line: text.lines().count().max(1),
            column: 1,
            message: "missing @DATA section".into(),
        });
    }
    Ok(ArffDocument {
        relation,
        attributes,
        rows,
    })
}

fn parse_kind(cur: &mut Cursor) -> Result<AttributeKind, ArffError> {
    cur.skip_ws();
    if cur.peek() == Some('{') {
        let open = cur.column();
        cur.bump();
        let mut values = Vec::new();
        let mut seen = HashSet::new();
        loop {
            cur.skip_ws();
            if cur.peek() == Some('}') && values.is_empty() {
                return Err(cur.error("empty nominal value list"));
            }
            let col = cur.column();
            let (v, quoted) = cur.read_token(&[',', '}'])?;
            if v.is_empty() && !quoted {
                return Err(cur.error("empty nominal value"));
            }
            if !seen.insert(v.clone()) {
                return Err(ArffError::Parse {
                    line: cur.line,
                    column: col,
                    message: format!("duplicate nominal value: {v}"),
                });
            }
            values.push(v);
            cur.skip_ws();
            match cur.bump() {
                Some(',') => continue,
                Some('}') => break,
                _ => {
                    return Err(ArffError::Parse {
                        line: cur.line,
                        column: open,
                        message: "unterminated nominal value list".into(),
                    })
                }
            }
        }
        cur.expect_end()?;
        return Ok(AttributeKind::Nominal(values));
    }
    let word = cur.read_word().to_ascii_lowercase();
    let kind = match word.as_str() {
        "numeric" | "real" | "integer" => AttributeKind::Numeric,
        "string" => AttributeKind::String,
        "date" => {
            cur.skip_ws();
            if cur.at_end_or_comment() {
                AttributeKind::Date(None)
            } else {
                let (fmt, _) = cur.read_token(&[])?;
                AttributeKind::Date(Some(fmt))
            }
        }
        "relational" => return Err(cur.error("relational attributes are not supported")),
        "" => return Err(cur.error("missing attribute type")),
        other => return Err(cur.error(&format!("unknown attribute type: {other}"))),
    };
    cur.expect_end()?;
    Ok(kind)
}

fn parse_row(cur: &mut Cursor, attributes: &[Attribute]) -> Result<Row, ArffError> {
    if cur.peek() == Some('{') {
        cur.bump();
        let mut entries: Vec<(usize, Value)> = Vec::new();
        cur.skip_ws();
        if cur.peek() == Some('}') {
            cur.bump();
        } else {
            loop {
                cur.skip_ws();
                let col = cur.column();
                let idx_text = cur.read_word();
                let idx: usize = idx_text.parse().map_err(|_| ArffError::Parse {
                    line: cur.line,
                    column: col,
                    message: format!("invalid sparse index: {idx_text:?}"),
                })?;
                if idx >= attributes.len() {
                    return Err(ArffError::Parse {
                        line: cur.line,
                        column: col,
                        message: format!("sparse index {idx} out of range"),
                    });
                }
                if entries.last().is_some_and(|(last, _)| *last >= idx) {
                    return Err(ArffError::Parse {
                        line: cur.line,
                        column: col,
                        message: "sparse indices must be strictly increasing".into(),
                    });
                }
                cur.skip_ws();
                let value = parse_cell(cur, &attributes[idx], &[',', '}'])?;
                entries.push((idx, value));
                cur.skip_ws();
                match cur.bump() {
                    Some(',') => continue,
                    Some('}') => break,
                    _ => return Err(cur.error("unterminated sparse row")),
                }
            }
        }
        cur.skip_ws();
        if cur.peek() == Some(',') || cur.peek() == Some('{') {
            return Err(cur.error("instance weights are not supported"));
        }
        cur.expect_end()?;
        return Ok(Row::Sparse(entries));
    }

    let mut cells = Vec::with_capacity(attributes.len());
    for (i, attr) in attributes.iter().enumerate() {
        cur.skip_ws();
        cells.push(parse_cell(cur, attr, &[','])?);
        cur.skip_ws();
        if i + 1 < attributes.len() && cur.bump() != Some(',') {
            return Err(cur.error(&format!(
                "expected {} cells, found {}",
                attributes.len(),
                i + 1
            )));
        }
    }
    cur.skip_ws();
    if cur.peek() == Some(',') {
        cur.bump();
        cur.skip_ws();
        if cur.peek() == Some('{') {
            return Err(cur.error("instance weights are not supported"));
        }
        return Err(cur.error(&format!("more than {} cells", attributes.len())));
    }
    cur.expect_end()?;
    Ok(Row::Dense(cells))
}

fn parse_cell(cur: &mut Cursor, attr: &Attribute, delims: &[char]) -> Result<Value, ArffError> {
    let col = cur.column();
    let (text, quoted) = cur.read_token(delims)?;
    let err = |message: String| ArffError::Parse {
        line: cur.line,
        column: col,
        message,
    };
    if !quoted && text == "?" {
        return Ok(Value::Missing);
    }
    if !quoted && text.is_empty() {
        return Err(err(format!("empty cell for attribute {}", attr.name)));
    }
    match &attr.kind {
        AttributeKind::Numeric => match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Value::Number(v)),
            _ => Err(err(format!(
                "non-numeric value {text:?} in numeric attribute {}",
                attr.name
            ))),
        },
        AttributeKind::Nominal(values) => {
            if values.contains(&text) {
                Ok(Value::Text(text))
            } else {
                Err(err(format!(
                    "unknown nominal value {text:?} for attribute {}",
                    attr.name
                )))
            }
        }
        AttributeKind::String | AttributeKind::Date(_) => Ok(Value::Text(text)),
    }
}

/// Character cursor over one line, tracking 1-based columns.
struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn new(line: &str, line_no: usize) -> Self {
        Cursor {
            chars: line.trim_end_matches('\r').chars().collect(),
            pos: 0,
            line: line_no,
        }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn at_end_or_comment(&self) -> bool {
        matches!(self.peek(), None | Some('%'))
    }

    fn expect_end(&mut self) -> Result<(), ArffError> {
        self.skip_ws();
        if self.at_end_or_comment() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing content"))
        }
    }

    fn error(&self, message: &str) -> ArffError {
        ArffError::Parse {
            line: self.line,
            column: self.column(),
            message: message.to_string(),
        }
    }

    /// Reads a run of non-whitespace, non-delimiter characters.
    fn read_word(&mut self) -> String {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| !c.is_whitespace() && !matches!(c, ',' | '{' | '}' | '%'))
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    /// Reads a quoted or bare token. Bare tokens end at a delimiter, a
    /// comment, or (when no delimiters are given) whitespace; surrounding
    /// whitespace is trimmed. Returns the text and whether it was quoted.
    fn read_token(&mut self, delims: &[char]) -> Result<(String, bool), ArffError> {
        match self.peek() {
            Some(q @ ('\'' | '"')) => {
                let open = self.column();
                self.bump();
                let mut out = String::new();
                loop {
                    match self.bump() {
                        None => {
                            return Err(ArffError::Parse {
                                line: self.line,
                                column: open,
                                message: "unterminated quoted string".into(),
                            })
                        }
                        Some('\\') => match self.bump() {
                            Some('n') => out.push('\n'),
                            Some('t') => out.push('\t'),
                            Some('r') => out.push('\r'),
                            Some(c) => out.push(c),
                            None => return Err(self.error("dangling escape")),
                        },
                        Some(c) if c == q => break,
                        Some(c) => out.push(c),
                    }
                }
                Ok((out, true))
            }
            _ => {
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if c == '%' || delims.contains(&c) || (delims.is_empty() && c.is_whitespace()) {
                        break;
                    }
                    self.pos += 1;
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                Ok((text.trim().to_string(), false))
            }
        }
    }
}
