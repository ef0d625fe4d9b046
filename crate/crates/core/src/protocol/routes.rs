//! Endpoint map, relative to the server base URL. Shared by the client and
//! the mock server so both sides agree on every path.

use std::collections::BTreeMap;

use percent_encoding::{utf8_percent_encode, AsciiSet, CONTROLS};

use crate::entities::EntityKind;

const SEGMENT: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'"')
    .add(b'#')
    .add(b'%')
    .add(b'/')
    .add(b'?')
    .add(b'<')
    .add(b'>')
    .add(b'`')
    .add(b'{')
    .add(b'}');

/// Percent-encodes one path segment.
pub fn segment(s: &str) -> String {
    utf8_percent_encode(s, SEGMENT).to_string()
}

pub fn decode_segment(s: &str) -> String {
    percent_encoding::percent_decode_str(s)
        .decode_utf8_lossy()
        .into_owned()
}

/// Identifier of a single entity: numeric id, or alias for suites.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKey {
    Id(u64),
    Alias(String),
}

impl std::fmt::Display for EntityKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntityKey::Id(id) => write!(f, "{id}"),
            EntityKey::Alias(a) => f.write_str(a),
        }
    }
}

impl From<u64> for EntityKey {
    fn from(id: u64) -> Self {
        EntityKey::Id(id)
    }
}

impl From<&str> for EntityKey {
    fn from(alias: &str) -> Self {
        match alias.parse::<u64>() {
            Ok(id) => EntityKey::Id(id),
            Err(_) => EntityKey::Alias(alias.to_string()),
        }
    }
}

/// `data/6`, `task/6`, `study/OpenML-CC18`, ...
pub fn entity(kind: EntityKind, key: &EntityKey) -> String {
    format!("{}/{}", kind.endpoint(), segment(&key.to_string()))
}

pub fn dataset_file(id: u64) -> String {
    format!("data/download/{id}")
}

pub fn dataset_features(id: u64) -> String {
    format!("data/features/{id}")
}

pub fn task_splits(id: u64) -> String {
    format!("task/splits/{id}")
}

pub fn run_predictions(id: u64) -> String {
    format!("run/predictions/{id}")
}

/// Publish endpoint for a kind.
pub fn publish(kind: EntityKind) -> String {
    kind.endpoint().to_string()
}

/// Listing with filters as alternating path segments, then paging.
pub fn list(kind: EntityKind, filters: &BTreeMap<String, String>, offset: usize, limit: usize) -> String {
    let mut path = format!("{}/list", kind.endpoint());
    for (k, v) in filters {
        path.push('/');
        path.push_str(&segment(k));
        path.push('/');
        path.push_str(&segment(v));
    }
    path.push_str(&format!("/limit/{limit}/offset/{offset}"));
    path
}

pub fn evaluation_list(function: &str, flows: &[u64], tasks: &[u64]) -> String {
    let join = |ids: &[u64]| ids.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let mut path = format!("evaluation/list/function/{}", segment(function));
    if !flows.is_empty() {
        path.push_str(&format!("/flow/{}", join(flows)));
    }
    if !tasks.is_empty() {
        path.push_str(&format!("/task/{}", join(tasks)));
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_map() {
        assert_eq!(entity(EntityKind::Dataset, &6.into()), "data/6");
        assert_eq!(entity(EntityKind::Suite, &"OpenML-CC18".into()), "study/OpenML-CC18");
        assert_eq!(
            evaluation_list("predictive_accuracy", &[8353], &[6]),
            "evaluation/list/function/predictive_accuracy/flow/8353/task/6"
        );
        let filters = BTreeMap::from([("name".to_string(), "a b/c".to_string())]);
        assert_eq!(list(EntityKind::Dataset, &filters, 0, 5), "data/list/name/a%20b%2Fc/limit/5/offset/0");
        assert_eq!(decode_segment("a%20b%2Fc"), "a b/c");
    }
}
