use crate::arff::DataTable;
use crate::entities::{Flow, FlowComponent, FlowParameter, ParameterSetting};

use super::learners::{self, FittedModel};
use super::{Extension, ExtensionError, ModelNode, ModelSpec};

pub const REFERENCE_FLAVOR: &str = "ref";
pub const REFERENCE_NAMESPACE: &str = "ref.";

const MAJORITY: &str = "ref.majority";
const STUMP: &str = "ref.stump";
const NN: &str = "ref.nn";
const IMPUTE_MEAN: &str = "ref.impute.mean";
const ONEHOT: &str = "ref.onehot";
const PIPELINE: &str = "ref.pipeline";
const GRIDSEARCH: &str = "ref.gridsearch";

/// Declared parameters per kind: (name, default, data type).
fn declared(kind: &str) -> Option<&'static [(&'static str, &'static str, &'static str)]> {
    Some(match kind {
        MAJORITY | NN | IMPUTE_MEAN | ONEHOT | PIPELINE => &[],
        STUMP => &[("max_depth", "1", "int")],
        GRIDSEARCH => &[("grid", "max_depth=1|2|3", "string")],
        _ => return None,
    })
}

pub(crate) fn is_transformer(kind: &str) -> bool {
    matches!(kind, IMPUTE_MEAN | ONEHOT)
}

fn default_role(kind: &str) -> &'static str {
    match kind {
        IMPUTE_MEAN => "imputer",
        ONEHOT => "encoder",
        _ => "learner",
    }
}

pub(crate) fn max_depth(node: &ModelNode) -> usize {
    node.param("max_depth").and_then(|v| v.parse().ok()).unwrap_or(1)
}

/// The built-in learner family.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceExtension;

impl ReferenceExtension {
    pub fn version_string() -> String {
        format!("omlclient-ref=={}", env!("CARGO_PKG_VERSION"))
    }

    fn normalize_node(&self, node: &ModelNode, path: &str) -> Result<ModelNode, ExtensionError> {
        let Some(params) = declared(&node.kind) else {
            return Err(ExtensionError::UnknownFlow(node.kind.clone()));
        };
        for (k, v) in &node.params {
            if !params.iter().any(|(name, _, _)| name == k) {
                return Err(ExtensionError::InvalidParameter {
                    path: format!("{path}{k}"),
                    value: v.clone(),
                    reason: format!("{} has no such parameter", node.kind),
                });
            }
        }
        let mut out = ModelNode::new(node.kind.clone());
        for (name, default, _) in params {
            let value = node.param(name).unwrap_or(default);
            out.params.push((name.to_string(), value.to_string()));
        }
        // Roles left empty by the spec parser are filled from the child kind.
        let mut used: Vec<String> = node.children.iter().filter(|(r, _)| !r.is_empty()).map(|(r, _)| r.clone()).collect();
        for (role, child) in &node.children {
            let role = if role.is_empty() {
                let base = if node.kind == GRIDSEARCH { "inner" } else { default_role(&child.kind) };
                let mut candidate = base.to_string();
                let mut n = 2;
                while used.contains(&candidate) {
                    candidate = format!("{base}{n}");
                    n += 1;
                }
                used.push(candidate.clone());
                candidate
            } else {
                role.clone()
            };
            let normalized = self.normalize_node(child, &format!("{path}{role}."))?;
            out.children.push((role, normalized));
        }
        self.check_node(&out, path)?;
        Ok(out)
    }

    fn check_node(&self, node: &ModelNode, path: &str) -> Result<(), ExtensionError> {
        let structure = |m: String| Err(ExtensionError::InvalidStructure(format!("{}: {m}", node.kind)));
        let mut roles = std::collections::HashSet::new();
        for (role, _) in &node.children {
            if !roles.insert(role.as_str()) {
                return structure(format!("component role not unique: {role}"));
            }
        }
        match node.kind.as_str() {
            MAJORITY | STUMP | NN | IMPUTE_MEAN | ONEHOT if !node.children.is_empty() => {
                return structure("takes no components".into())
            }
            PIPELINE => {
                let Some(((_, last), steps)) = node.children.split_last() else {
                    return structure("needs at least one component".into());
                };
                if let Some((role, _)) = steps.iter().find(|(_, c)| !is_transformer(&c.kind)) {
                    return structure(format!("step {role} before the last must be a transformer"));
                }
                if is_transformer(&last.kind) {
                    return structure("last component must be a learner".into());
                }
            }
            GRIDSEARCH => {
                if node.children.len() != 1 || node.children[0].0 != "inner" {
                    return structure("needs exactly one component with role inner".into());
                }
                if is_transformer(&node.children[0].1.kind) {
                    return structure("inner component must be a learner".into());
                }
            }
            _ => {}
        }
        if node.kind == STUMP {
            let v = node.param("max_depth").unwrap_or_default();
            if !matches!(v.parse::<usize>(), Ok(d) if d >= 1) {
                return Err(ExtensionError::InvalidParameter {
                    path: format!("{path}max_depth"),
                    value: v.to_string(),
                    reason: "expected an integer >= 1".into(),
                });
            }
        }
        if node.kind == GRIDSEARCH {
            let grid = node.param("grid").unwrap_or_default();
            let invalid = |reason: String| ExtensionError::InvalidParameter {
                path: format!("{path}grid"),
                value: grid.to_string(),
                reason,
            };
            let points = learners::parse_grid(grid).map_err(invalid)?;
            for point in points {
                let mut inner = node.children[0].1.clone();
                for (k, v) in &point {
                    inner.set_path(k, v).map_err(|e| invalid(e.to_string()))?;
                }
                self.check_tree(&inner, &format!("{path}inner."))
                    .map_err(|e| invalid(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn check_tree(&self, node: &ModelNode, path: &str) -> Result<(), ExtensionError> {
        self.check_node(node, path)?;
        for (role, c) in &node.children {
            self.check_tree(c, &format!("{path}{role}."))?;
        }
        Ok(())
    }

    fn node_to_flow(&self, node: &ModelNode) -> Flow {
        let params = declared(&node.kind).unwrap_or(&[]);
        Flow {
            id: None,
            name: node.kind.clone(),
            external_version: Self::version_string(),
            parameters: node
                .params
                .iter()
                .map(|(k, v)| FlowParameter {
                    name: k.clone(),
                    default_value: v.clone(),
                    kind: params
                        .iter()
                        .find(|(n, _, _)| n == k)
                        .map_or("string", |(_, _, t)| *t)
                        .to_string(),
                })
                .collect(),
            components: node
                .children
                .iter()
                .map(|(role, c)| FlowComponent {
                    role: role.clone(),
                    flow: self.node_to_flow(c),
                })
                .collect(),
            dependencies: format!("omlclient=={}", env!("CARGO_PKG_VERSION")),
        }
    }

    fn flow_to_node(&self, flow: &Flow) -> Result<ModelNode, ExtensionError> {
        if !flow.name.starts_with(REFERENCE_NAMESPACE) || declared(&flow.name).is_none() {
            return Err(ExtensionError::UnknownFlow(flow.name.clone()));
        }
        let mut node = ModelNode::new(flow.name.clone());
        for p in &flow.parameters {
            node.set_param(&p.name, p.default_value.clone());
        }
        for c in &flow.components {
            if c.role.is_empty() {
                return Err(ExtensionError::InvalidStructure("component with an empty role".into()));
            }
            node.children.push((c.role.clone(), self.flow_to_node(&c.flow)?));
        }
        Ok(node)
    }
}

impl Extension for ReferenceExtension {
    fn flavor(&self) -> &str {
        REFERENCE_FLAVOR
    }

    fn namespace(&self) -> &str {
        REFERENCE_NAMESPACE
    }

    fn version(&self) -> &str {
        env!("CARGO_PKG_VERSION")
    }

    fn normalize(&self, model: &ModelSpec) -> Result<ModelSpec, ExtensionError> {
        if model.flavor != REFERENCE_FLAVOR {
            return Err(ExtensionError::UnknownFlavor(model.flavor.clone()));
        }
        Ok(ModelSpec::new(REFERENCE_FLAVOR, self.normalize_node(&model.root, "")?))
    }

    fn model_to_flow(&self, model: &ModelSpec) -> Result<Flow, ExtensionError> {
        let model = self.normalize(model)?;
        Ok(self.node_to_flow(&model.root))
    }

    fn flow_to_model(&self, flow: &Flow, setup: &[ParameterSetting]) -> Result<ModelSpec, ExtensionError> {
        let mut root = self.flow_to_node(flow)?;
        for s in setup {
            root.set_path(&s.path, &s.value)?;
        }
        self.normalize(&ModelSpec::new(REFERENCE_FLAVOR, root))
    }

    fn fit(
        &self,
        model: &ModelSpec,
        table: &DataTable,
        target: &str,
        class_labels: &[String],
        train: &[usize],
        seed: u64,
    ) -> Result<FittedModel, ExtensionError> {
        let model = self.normalize(model)?;
        learners::fit_model(model, table, target, class_labels, train, seed)
    }
}
