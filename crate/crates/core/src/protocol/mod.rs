//! REST/XML wire protocol: endpoint map, entity codec, error decoding, and
//! a blocking HTTP client with retries.

mod client;
pub mod codec;
pub mod multipart;
pub mod routes;
pub mod xml;

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use thiserror::Error;

use crate::entities::EvaluationRecord;

pub use client::Client;
pub use codec::{Entity, EntitySummary};

pub const DEFAULT_SERVER: &str = "https://www.openml.org/api/v1/xml";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_RETRIES: u32 = 2;
pub const MAX_RETRIES: u32 = 10;
pub const MAX_LIST_LIMIT: usize = 10_000;

/// Error codes the client itself relies on.
pub mod codes {
    pub const UNKNOWN_ROUTE: u32 = 0;
    pub const UPLOAD_VALIDATION: u32 = 102;
    pub const AUTHENTICATION_FAILED: u32 = 103;
    pub const UNKNOWN_DATASET: u32 = 111;
    pub const UNKNOWN_TASK: u32 = 151;
    pub const UNKNOWN_FLOW: u32 = 181;
    pub const UNKNOWN_RUN: u32 = 221;
    pub const UNKNOWN_MEASURE: u32 = 541;
    pub const UNKNOWN_STUDY: u32 = 601;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Additional attempts after the first, on transport failures and 5xx.
    pub retries: u32,
    /// First backoff step; doubles per attempt, plus deterministic jitter.
    pub backoff: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            base_url: DEFAULT_SERVER.to_string(),
            api_key: None,
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(250),
        }
    }
}

impl ServerConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServerConfig {
            base_url: base_url.into(),
            ..Default::default()
        }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match url::Url::parse(&self.base_url) {
            Ok(u) if u.has_host() => {}
            _ => out.push(format!("base_url is not an absolute URL: {}", self.base_url)),
        }
        if self.retries > MAX_RETRIES {
            out.push(format!("retries must be <= {MAX_RETRIES}"));
        }
        if self.timeout.is_zero() {
            out.push("timeout must be positive".into());
        }
        out
    }

    /// `host` or `host_port`, used to keep cache entries of different
    /// servers apart.
    pub fn host_key(&self) -> String {
        let Ok(u) = url::Url::parse(&self.base_url) else {
            return "invalid-host".into();
        };
        let host = u.host_str().unwrap_or("localhost").to_string();
        match u.port() {
            Some(p) => format!("{host}_{p}"),
            None => host,
        }
    }
}

/// Platform error decoded from a non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("server error {code} (HTTP {http_status}): {message}")]
pub struct ApiError {
    pub http_status: u16,
    pub code: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error: {message}")]
pub struct DecodeError {
    pub message: String,
}

impl DecodeError {
    pub fn new(message: impl Into<String>) -> Self {
        DecodeError {
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl ProtocolError {
    pub fn api_code(&self) -> Option<u32> {
        match self {
            ProtocolError::Api(e) => Some(e.code),
            _ => None,
        }
    }
}

/// Decodes an error response. Bodies that are not error XML yield code 0
/// with the first 200 bytes as the message.
pub fn decode_error(http_status: u16, body: &[u8]) -> ApiError {
    if let Ok(el) = xml::parse(body) {
        if el.name == "error" {
            if let Some(code) = el.text_of("code").and_then(|c| c.trim().parse().ok()) {
                return ApiError {
                    http_status,
                    code,
                    message: el.text_of("message").unwrap_or_default().to_string(),
                };
            }
        }
    }
    let head = &body[..body.len().min(200)];
    ApiError {
        http_status,
        code: 0,
        message: String::from_utf8_lossy(head).into_owned(),
    }
}

pub fn encode_error(code: u32, message: &str) -> String {
    xml::Element::new("error")
        .leaf("code", code)
        .leaf("message", message)
        .to_xml()
}

/// Replaces the API key (and any `api_key=` query value) with `***`.
pub fn scrub(text: &str, api_key: Option<&str>) -> String {
    let mut out = match api_key {
        Some(k) if !k.is_empty() => text.replace(k, "***"),
        _ => text.to_string(),
    };
    let mut search = 0;
    while let Some(pos) = out[search..].find("api_key=") {
        let start = search + pos + "api_key=".len();
        let end = out[start..]
            .find(|c: char| c == '&' || c.is_whitespace() || c == '"' || c == '\'')
            .map_or(out.len(), |e| start + e);
        out.replace_range(start..end, "***");
        search = start + 3;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParameterLayout {
    /// One column per distinct parameter name.
    SeparateColumns,
    /// All parameters in one map-valued `parameters` column.
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Value(String),
    Parameters(BTreeMap<String, String>),
}

impl Cell {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Value(s) => Some(s),
            _ => None,
        }
    }
}

pub const FIXED_EVALUATION_COLUMNS: [&str; 5] = ["run_id", "task_id", "flow_id", "function", "value"];

/// Evaluation records flattened into a rectangular table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl EvaluationTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn flatten_evaluations(records: &[EvaluationRecord], layout: ParameterLayout) -> EvaluationTable {
    let mut columns: Vec<String> = FIXED_EVALUATION_COLUMNS.iter().map(|s| s.to_string()).collect();
    let fixed = |r: &EvaluationRecord| {
        vec![
            Cell::Value(r.run_id.to_string()),
            Cell::Value(r.task_id.to_string()),
            Cell::Value(r.flow_id.to_string()),
            Cell::Value(r.function.clone()),
            Cell::Value(r.value.to_string()),
        ]
    };
    match layout {
        ParameterLayout::Combined => {
            columns.push("parameters".into());
            let rows = records
                .iter()
                .map(|r| {
                    let mut row = fixed(r);
                    row.push(Cell::Parameters(r.parameters.clone()));
                    row
                })
                .collect();
            EvaluationTable { columns, rows }
        }
        ParameterLayout::SeparateColumns => {
            let mut seen = HashSet::new();
            let mut params = Vec::new();
            for r in records {
                for name in r.parameters.keys() {
                    if seen.insert(name.as_str()) {
                        params.push(name.clone());
                    }
                }
            }
            let rows = records
                .iter()
                .map(|r| {
                    let mut row = fixed(r);
                    row.extend(params.iter().map(|p| match r.parameters.get(p) {
                        Some(v) => Cell::Value(v.clone()),
                        None => Cell::Missing,
                    }));
                    row
                })
                .collect();
            columns.extend(params);
            EvaluationTable { columns, rows }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_error_document() {
        let body = encode_error(102, "Upload validation failed");
        let e = decode_error(412, body.as_bytes());
        assert_eq!(e, ApiError { http_status: 412, code: 102, message: "Upload validation failed".into() });
    }

    #[test]
    fn decode_error_fallbacks() {
        assert_eq!(decode_error(500, b""), ApiError { http_status: 500, code: 0, message: String::new() });
        let html = format!("<html><body>{}</body></html>", "x".repeat(400));
        let e = decode_error(502, html.as_bytes());
        assert_eq!(e.code, 0);
        assert_eq!(e.message.len(), 200);
        assert!(e.message.starts_with("<html>"));
    }

    #[test]
    fn scrubs_keys() {
        let s = scrub("POST http://h/run?api_key=secret123&x=1 failed: secret123", Some("secret123"));
        assert!(!s.contains("secret123"));
        assert_eq!(s, "POST http://h/run?api_key=***&x=1 failed: ***");
        assert_eq!(scrub("u?api_key=zz", None), "u?api_key=***");
    }

    #[test]
    fn config_rules() {
        assert!(ServerConfig::default().validate().is_empty());
        let mut c = ServerConfig::new("relative/path");
        c.retries = 11;
        assert_eq!(c.validate().len(), 2);
        assert_eq!(ServerConfig::default().host_key(), "www.openml.org");
        assert_eq!(ServerConfig::new("http://127.0.0.1:8080/api").host_key(), "127.0.0.1_8080");
    }

    fn record(run_id: u64, flow_id: u64, params: &[(&str, &str)]) -> EvaluationRecord {
        EvaluationRecord {
            run_id,
            task_id: 6,
            flow_id,
            function: "predictive_accuracy".into(),
            value: 0.5,
            parameters: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn flatten_unions_disjoint_parameters() {
        let records = vec![
            record(1, 10, &[("a(1)_C", "1"), ("a(1)_gamma", "2")]),
            record(2, 11, &[("b(3)_depth", "4")]),
        ];
        let t = flatten_evaluations(&records, ParameterLayout::SeparateColumns);
        // brute-force union of parameter names over the setup lists
        let mut union: Vec<&str> = records
            .iter()
            .flat_map(|r| r.parameters.keys().map(String::as_str))
            .collect();
        union.sort();
        union.dedup();
        assert_eq!(t.columns.len(), 5 + union.len());
        for name in &union {
            let j = t.column_index(name).unwrap();
            for (i, r) in records.iter().enumerate() {
                match r.parameters.get(*name) {
                    Some(v) => assert_eq!(t.rows[i][j], Cell::Value(v.clone())),
                    None => assert_eq!(t.rows[i][j], Cell::Missing),
                }
            }
        }
        let combined = flatten_evaluations(&records, ParameterLayout::Combined);
        assert_eq!(&combined.columns[..5], &t.columns[..5]);
        assert_eq!(combined.columns[5], "parameters");
        assert_eq!(&combined.rows[0][..5], &t.rows[0][..5]);
    }
}
