//! Minimal XML element tree: enough for the wire documents, which use only
//! elements and text (no attributes, no mixed content).

use std::fmt::{Display, Write as _};

use quick_xml::events::Event;
use quick_xml::Reader;

use super::DecodeError;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Element {
    pub name: String,
    /// Text content of leaf elements; ignored when `children` is non-empty.
    pub text: String,
    pub children: Vec<Element>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Self {
        Element {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn text_node(name: impl Into<String>, text: impl Display) -> Self {
        Element {
            name: name.into(),
            text: text.to_string(),
            children: Vec::new(),
        }
    }

    /// Appends a leaf child and returns `self` for chaining.
    pub fn leaf(mut self, name: &str, text: impl Display) -> Self {
        self.children.push(Element::text_node(name, text));
        self
    }

    pub fn opt_leaf<T: Display>(self, name: &str, value: Option<T>) -> Self {
        match value {
            Some(v) => self.leaf(name, v),
            None => self,
        }
    }

    pub fn child_el(mut self, child: Element) -> Self {
        self.children.push(child);
        self
    }

    pub fn push(&mut self, child: Element) {
        self.children.push(child);
    }

    pub fn child(&self, name: &str) -> Option<&Element> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }

    pub fn text_of(&self, name: &str) -> Option<&str> {
        self.child(name).map(|c| c.text.as_str())
    }

    /// Serializes with an XML declaration and two-space indentation.
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        self.write(&mut out, 0);
        out
    }

    fn write(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        if self.children.is_empty() {
            if self.text.is_empty() {
                let _ = writeln!(out, "{pad}<{}/>", self.name);
            } else {
                let _ = writeln!(out, "{pad}<{0}>{1}</{0}>", self.name, escape(&self.text));
            }
            return;
        }
        let _ = writeln!(out, "{pad}<{}>", self.name);
        for c in &self.children {
            c.write(out, depth + 1);
        }
        let _ = writeln!(out, "{pad}</{}>", self.name);
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

/// Parses a document into its root element. Namespace prefixes are dropped.
pub fn parse(bytes: &[u8]) -> Result<Element, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError::new(format!("invalid UTF-8: {e}")))?;
    let mut reader = Reader::from_str(text);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    let err = |e: &dyn Display| DecodeError::new(format!("malformed XML: {e}"));

    loop {
        let event = reader.read_event().map_err(|e| err(&e))?;
        match event {
            Event::Start(e) => {
                if root.is_some() {
                    return Err(DecodeError::new("content after the root element"));
                }
                let name = e.local_name().into_inner().to_string();
                stack.push(Element::new(name));
            }
            Event::Empty(e) => {
                let name = e.local_name().into_inner().to_string();
                let el = Element::new(name);
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(DecodeError::new("content after the root element")),
                }
            }
            Event::End(_) => {
                let mut el = stack.pop().ok_or_else(|| DecodeError::new("unbalanced end tag"))?;
                if !el.children.is_empty() {
                    el.text.clear();
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => root = Some(el),
                }
            }
            Event::Text(t) => {
                let content = t.xml10_content();
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&content),
                    None if content.trim().is_empty() => {}
                    None => return Err(DecodeError::new("text outside the root element")),
                }
            }
            Event::CData(t) => {
                let content = t.into_inner().into_owned();
                if let Some(el) = stack.last_mut() {
                    el.text.push_str(&content);
                }
            }
            Event::GeneralRef(r) => {
                let resolved = match r.resolve_char_ref().map_err(|e| err(&e))? {
                    Some(c) => c,
                    None => match r.xml10_content().as_ref() {
                        "amp" => '&',
                        "lt" => '<',
                        "gt" => '>',
                        "quot" => '"',
                        "apos" => '\'',
                        other => return Err(DecodeError::new(format!("unknown entity &{other};"))),
                    },
                };
                if let Some(el) = stack.last_mut() {
                    el.text.push(resolved);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(DecodeError::new("unexpected end of document"));
    }
    root.ok_or_else(|| DecodeError::new("empty document"))
}
