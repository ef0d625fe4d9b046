//! Learner extensions: conversion between models and flows, and fold
//! training. The reference family (`ref.` namespace) ships with the crate.

mod learners;
mod reference;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

use crate::arff::DataTable;
use crate::entities::{Flow, ParameterSetting};

pub use learners::{inner_split, parse_grid, FittedModel, FoldOutput, FoldPrediction, TraceCandidate};
pub use reference::{ReferenceExtension, REFERENCE_FLAVOR, REFERENCE_NAMESPACE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtensionError {
    #[error("no extension registered for flavor {0:?}")]
    UnknownFlavor(String),
    #[error("flow is not handled by any registered extension: {0}")]
    UnknownFlow(String),
    #[error("invalid value {value:?} for parameter {path}: {reason}")]
    InvalidParameter {
        path: String,
        value: String,
        reason: String,
    },
    #[error("invalid model structure: {0}")]
    InvalidStructure(String),
    #[error("model spec syntax error: {0}")]
    Syntax(String),
    #[error("degenerate training fold: {0}")]
    DegenerateFold(String),
    #[error("invalid fold input: {0}")]
    InvalidInput(String),
    #[error("namespace {0:?} is already claimed by another extension")]
    DuplicateNamespace(String),
}

/// One node of a model tree: a kind (full flow name), parameter values in
/// declaration order, and named children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelNode {
    pub kind: String,
    pub params: Vec<(String, String)>,
    pub children: Vec<(String, ModelNode)>,
}

impl ModelNode {
    pub fn new(kind: impl Into<String>) -> Self {
        ModelNode {
            kind: kind.into(),
            params: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn set_param(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self.params.iter_mut().find(|(k, _)| k == name) {
            Some(slot) => slot.1 = value,
            None => self.params.push((name.to_string(), value)),
        }
    }

    pub fn with_param(mut self, name: &str, value: impl Into<String>) -> Self {
        self.set_param(name, value);
        self
    }

    pub fn with_child(mut self, role: impl Into<String>, child: ModelNode) -> Self {
        self.children.push((role.into(), child));
        self
    }

    pub fn child(&self, role: &str) -> Option<&ModelNode> {
        self.children.iter().find(|(r, _)| r == role).map(|(_, c)| c)
    }

    /// Sets a parameter addressed by a dotted `role.role.name` path.
    pub fn set_path(&mut self, path: &str, value: &str) -> Result<(), ExtensionError> {
        if let Some((role, rest)) = path.split_once('.') {
            if let Some((_, child)) = self.children.iter_mut().find(|(r, _)| r == role) {
                return child.set_path(rest, value);
            }
        }
        if self.param(path).is_none() {
            return Err(ExtensionError::InvalidParameter {
                path: path.to_string(),
                value: value.to_string(),
                reason: format!("{} has no such parameter", self.kind),
            });
        }
        self.set_param(path, value);
        Ok(())
    }
}

/// A model description owned by one extension flavor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub flavor: String,
    pub root: ModelNode,
}

impl ModelSpec {
    pub fn new(flavor: impl Into<String>, root: ModelNode) -> Self {
        ModelSpec {
            flavor: flavor.into(),
            root,
        }
    }

    /// Parses the compact spec grammar. `:` separates sections; section 0
    /// is the root with `,key=value` parameters, and each later section
    /// lists the children of the last node of the previous one. Names
    /// without the `ref.` prefix get it.
    ///
    /// `ref.pipeline:impute.mean,onehot,stump,max_depth=2`
    pub fn parse(text: &str) -> Result<ModelSpec, ExtensionError> {
        text.parse()
    }

    /// Renders the spec string for trees the grammar can express, i.e.
    /// where only the last node of each level has children.
    pub fn to_spec_string(&self) -> Option<String> {
        let mut sections = Vec::new();
        let mut level = vec![&self.root];
        loop {
            let mut tokens = Vec::new();
            for (i, node) in level.iter().enumerate() {
                if i + 1 < level.len() && !node.children.is_empty() {
                    return None;
                }
                tokens.push(short_name(&node.kind).to_string());
                tokens.extend(node.params.iter().map(|(k, v)| format!("{k}={v}")));
            }
            sections.push(tokens.join(","));
            let last = level[level.len() - 1];
            if last.children.is_empty() {
                break;
            }
            level = last.children.iter().map(|(_, c)| c).collect();
        }
        Some(sections.join(":"))
    }
}

fn short_name(kind: &str) -> &str {
    kind.strip_prefix(REFERENCE_NAMESPACE).unwrap_or(kind)
}

impl FromStr for ModelSpec {
    type Err = ExtensionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let syntax = |m: String| ExtensionError::Syntax(m);
        let full = |name: &str| {
            if name.starts_with(REFERENCE_NAMESPACE) {
                name.to_string()
            } else {
                format!("{REFERENCE_NAMESPACE}{name}")
            }
        };
        // Each section is parsed into (name, params) nodes; children are
        // attached bottom-up afterwards.
        let mut sections: Vec<Vec<ModelNode>> = Vec::new();
        for (k, section) in text.trim().split(':').enumerate() {
            let mut nodes: Vec<ModelNode> = Vec::new();
            for token in section.split(',').map(str::trim) {
                if token.is_empty() {
                    return Err(syntax(format!("empty token in section {k} of {text:?}")));
                }
                match token.split_once('=') {
                    Some((key, value)) => {
                        let node = nodes
                            .last_mut()
                            .ok_or_else(|| syntax(format!("parameter {token:?} has no preceding model")))?;
                        if node.param(key).is_some() {
                            return Err(syntax(format!("parameter {key} given twice")));
                        }
                        node.params.push((key.trim().to_string(), value.trim().to_string()));
                    }
                    None => {
                        if k == 0 && !nodes.is_empty() {
                            return Err(syntax(format!("section 0 must name a single root, found {token:?}")));
                        }
                        nodes.push(ModelNode::new(full(token)));
                    }
                }
            }
            sections.push(nodes);
        }
        let mut below: Option<Vec<ModelNode>> = None;
        for mut nodes in sections.into_iter().rev() {
            if let Some(children) = below.take() {
                let parent = nodes.last_mut().expect("sections are non-empty");
                parent.children = children.into_iter().map(|c| (String::new(), c)).collect();
            }
            below = Some(nodes);
        }
        let root = below.and_then(|mut v| v.pop()).ok_or_else(|| syntax("empty model spec".into()))?;
        registry().normalize(&ModelSpec::new(REFERENCE_FLAVOR, root))
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_spec_string() {
            Some(s) => f.write_str(&s),
            None => write!(f, "{}:{:?}", self.flavor, self.root),
        }
    }
}

/// The contract a learner family implements.
pub trait Extension: Send + Sync {
    /// Identifier stored in [`ModelSpec::flavor`].
    fn flavor(&self) -> &str;
    /// Flow name prefix this extension owns, e.g. `ref.`.
    fn namespace(&self) -> &str;
    fn version(&self) -> &str;
    /// Fills defaults, orders parameters, assigns roles, checks structure.
    fn normalize(&self, model: &ModelSpec) -> Result<ModelSpec, ExtensionError>;
    fn model_to_flow(&self, model: &ModelSpec) -> Result<Flow, ExtensionError>;
    fn flow_to_model(&self, flow: &Flow, setup: &[ParameterSetting]) -> Result<ModelSpec, ExtensionError>;
    /// Trains on `train` rows only. Every random choice derives from `seed`.
    fn fit(
        &self,
        model: &ModelSpec,
        table: &DataTable,
        target: &str,
        class_labels: &[String],
        train: &[usize],
        seed: u64,
    ) -> Result<FittedModel, ExtensionError>;
}

/// Extensions keyed by flavor; a namespace may be claimed only once.
pub struct Registry {
    extensions: Vec<Box<dyn Extension>>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.extensions.iter().map(|e| e.flavor())).finish()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry { extensions: Vec::new() }
    }

    pub fn register(&mut self, ext: Box<dyn Extension>) -> Result<(), ExtensionError> {
        let clash = self.extensions.iter().any(|e| {
            e.flavor() == ext.flavor()
                || e.namespace().starts_with(ext.namespace())
                || ext.namespace().starts_with(e.namespace())
        });
        if clash {
            return Err(ExtensionError::DuplicateNamespace(ext.namespace().to_string()));
        }
        self.extensions.push(ext);
        Ok(())
    }

    pub fn by_flavor(&self, flavor: &str) -> Result<&dyn Extension, ExtensionError> {
        self.extensions
            .iter()
            .find(|e| e.flavor() == flavor)
            .map(|e| e.as_ref())
            .ok_or_else(|| ExtensionError::UnknownFlavor(flavor.to_string()))
    }

    pub fn for_flow(&self, flow: &Flow) -> Result<&dyn Extension, ExtensionError> {
        self.extensions
            .iter()
            .find(|e| flow.name.starts_with(e.namespace()))
            .map(|e| e.as_ref())
            .ok_or_else(|| ExtensionError::UnknownFlow(flow.name.clone()))
    }

    pub fn normalize(&self, model: &ModelSpec) -> Result<ModelSpec, ExtensionError> {
        self.by_flavor(&model.flavor)?.normalize(model)
    }

    pub fn model_to_flow(&self, model: &ModelSpec) -> Result<Flow, ExtensionError> {
        self.by_flavor(&model.flavor)?.model_to_flow(model)
    }

    pub fn flow_to_model(&self, flow: &Flow, setup: &[ParameterSetting]) -> Result<ModelSpec, ExtensionError> {
        self.for_flow(flow)?.flow_to_model(flow, setup)
    }
}

/// Process-wide registry holding the reference extension.
pub fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r = Registry::empty();
        r.register(Box::new(ReferenceExtension)).expect("empty registry");
        r
    })
}

pub fn model_to_flow(model: &ModelSpec) -> Result<Flow, ExtensionError> {
    registry().model_to_flow(model)
}

pub fn flow_to_model(flow: &Flow, setup: &[ParameterSetting]) -> Result<ModelSpec, ExtensionError> {
    registry().flow_to_model(flow, setup)
}

/// Trains on `train`, predicts `test`, and returns the predictions in
/// `test` order together with any search trace.
#[allow(clippy::too_many_arguments)]
pub fn fit_predict_fold(
    model: &ModelSpec,
    table: &DataTable,
    target: &str,
    class_labels: &[String],
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<FoldOutput, ExtensionError> {
    let mut seen = std::collections::HashSet::with_capacity(train.len());
    for &i in train.iter().chain(test) {
        if i >= table.row_count {
            return Err(ExtensionError::InvalidInput(format!(
                "row index {i} outside the table of {} rows",
                table.row_count
            )));
        }
        if !seen.insert(i) {
            return Err(ExtensionError::InvalidInput(format!(
                "row {i} appears twice in the train/test indices"
            )));
        }
    }
    let fitted = registry().by_flavor(&model.flavor)?.fit(model, table, target, class_labels, train, seed)?;
    Ok(FoldOutput {
        predictions: fitted.predict(table, test)?,
        trace: fitted.trace().to_vec(),
    })
}
