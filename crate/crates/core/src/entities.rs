//! Domain types for the platform's entity model.
//!
//! Every type here is an immutable value: build a modified copy instead of
//! editing in place. Invariants are checked by [`Validate::validate`], which
//! reports violations as data rather than failing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

/// Default bound on flow tree depth accepted by [`Validate`].
pub const DEFAULT_MAX_FLOW_DEPTH: usize = 32;

/// Tolerance for confidence vectors summing to one.
pub const CONFIDENCE_TOLERANCE: f64 = 1e-6;

/// Entity kinds addressable over the wire and in the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Dataset,
    Task,
    Flow,
    Run,
    Suite,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Dataset,
        EntityKind::Task,
        EntityKind::Flow,
        EntityKind::Run,
        EntityKind::Suite,
    ];

    /// Lower-case name used in cache paths and CLI arguments.
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Dataset => "dataset",
            EntityKind::Task => "task",
            EntityKind::Flow => "flow",
            EntityKind::Run => "run",
            EntityKind::Suite => "suite",
        }
    }

    /// First path segment of this kind's REST endpoints.
    pub fn endpoint(self) -> &'static str {
        match self {
            EntityKind::Dataset => "data",
            EntityKind::Task => "task",
            EntityKind::Flow => "flow",
            EntityKind::Run => "run",
            EntityKind::Suite => "study",
        }
    }

    pub fn parse(s: &str) -> Option<EntityKind> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.endpoint() == s)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Numeric,
    Nominal,
    String,
    Date,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Nominal => "nominal",
            FeatureKind::String => "string",
            FeatureKind::Date => "date",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureKind> {
        match s {
            "numeric" => Some(FeatureKind::Numeric),
            "nominal" => Some(FeatureKind::Nominal),
            "string" => Some(FeatureKind::String),
            "date" => Some(FeatureKind::Date),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub index: usize,
    pub name: String,
    pub kind: FeatureKind,
    pub nominal_values: Vec<String>,
    pub missing_count: u64,
}

/// Dataset metadata. `id` is `None` for a local draft that has not been
/// published yet.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDescription {
    pub id: Option<u64>,
    pub name: String,
    pub version: u32,
    pub default_target_attribute: Option<String>,
    /// Hex MD5 of the payload file.
    pub file_checksum: String,
    pub features: Vec<Feature>,
    pub qualities: BTreeMap<String, f64>,
}

impl DatasetDescription {
    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskType {
    SupervisedClassification,
    SupervisedRegression,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::SupervisedClassification => "supervised_classification",
            TaskType::SupervisedRegression => "supervised_regression",
        }
    }

    pub fn parse(s: &str) -> Option<TaskType> {
        match s {
            "supervised_classification" => Some(TaskType::SupervisedClassification),
            "supervised_regression" => Some(TaskType::SupervisedRegression),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resampling {
    CrossValidation { folds: u32 },
    /// `percentage` of rows held out for testing, in (0, 100).
    Holdout { percentage: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProcedure {
    pub resampling: Resampling,
    pub repeats: u32,
    /// Identifier of the split table artifact; empty for drafts.
    pub splits_ref: String,
}

impl EstimationProcedure {
    pub fn cross_validation(repeats: u32, folds: u32) -> Self {
        EstimationProcedure {
            resampling: Resampling::CrossValidation { folds },
            repeats,
            splits_ref: String::new(),
        }
    }

    /// Folds per repeat; holdout has a single fold.
    pub fn folds(&self) -> u32 {
        match self.resampling {
            Resampling::CrossValidation { folds } => folds,
            Resampling::Holdout { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: Option<u64>,
    pub task_type: TaskType,
    pub dataset_id: u64,
    pub target_name: String,
    pub estimation_procedure: EstimationProcedure,
    pub class_labels: Vec<String>,
}

impl Task {
    /// Classification task on `dataset` predicting `target`, with the
    /// target's nominal values as class labels.
    pub fn classification(
        dataset: &DatasetDescription,
        target: &str,
        estimation_procedure: EstimationProcedure,
    ) -> Result<Task, String> {
        let dataset_id = dataset.id.ok_or("dataset has no id")?;
        let feature = dataset
            .feature(target)
            .ok_or_else(|| format!("no feature named {target}"))?;
        if feature.kind != FeatureKind::Nominal {
            return Err(format!("target {target} is not nominal"));
        }
        Ok(Task {
            id: None,
            task_type: TaskType::SupervisedClassification,
            dataset_id,
            target_name: target.to_string(),
            estimation_procedure,
            class_labels: feature.nominal_values.clone(),
        })
    }

    /// Checks that the target is a feature of `dataset` (and, for
    /// classification, a nominal one whose values are the class labels).
    pub fn validate_against(&self, dataset: &DatasetDescription) -> Vec<String> {
        let mut out = Vec::new();
        if dataset.id.is_some() && dataset.id != Some(self.dataset_id) {
            out.push(format!(
                "dataset_id {} does not match dataset {:?}",
                self.dataset_id, dataset.id
            ));
        }
        match dataset.feature(&self.target_name) {
            None => out.push(format!(
                "target_name is not a feature of the dataset: {}",
                self.target_name
            )),
            Some(f) if self.task_type == TaskType::SupervisedClassification => {
                if f.kind != FeatureKind::Nominal {
                    out.push(format!("target feature is not nominal: {}", f.name));
                } else if f.nominal_values != self.class_labels {
                    out.push("class_labels differ from the target's nominal values".into());
                }
            }
            Some(_) => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowParameter {
    pub name: String,
    pub default_value: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowComponent {
    pub role: String,
    pub flow: Flow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: Option<u64>,
    pub name: String,
    pub external_version: String,
    pub parameters: Vec<FlowParameter>,
    pub components: Vec<FlowComponent>,
    pub dependencies: String,
}

impl Flow {
    pub fn leaf(name: impl Into<String>, external_version: impl Into<String>) -> Flow {
        Flow {
            id: None,
            name: name.into(),
            external_version: external_version.into(),
            parameters: Vec::new(),
            components: Vec::new(),
            dependencies: String::new(),
        }
    }

    pub fn component(&self, role: &str) -> Option<&Flow> {
        self.components
            .iter()
            .find(|c| c.role == role)
            .map(|c| &c.flow)
    }

    pub fn parameter(&self, name: &str) -> Option<&FlowParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Resolves a dotted `role.role.parameter` path against this tree.
    pub fn resolve_parameter(&self, path: &str) -> Option<&FlowParameter> {
        match path.split_once('.') {
            Some((role, rest)) => match self.component(role) {
                Some(child) => child.resolve_parameter(rest),
                // Parameter names may themselves contain dots.
                None => self.parameter(path),
            },
            None => self.parameter(path),
        }
    }

    /// Every parameter in the tree with its dotted path and default value,
    /// root parameters first, then components in order.
    pub fn parameter_settings(&self) -> Vec<ParameterSetting> {
        let mut out = Vec::new();
        self.collect_settings("", &mut out);
        out
    }

    fn collect_settings(&self, prefix: &str, out: &mut Vec<ParameterSetting>) {
        for p in &self.parameters {
            out.push(ParameterSetting {
                path: format!("{prefix}{}", p.name),
                value: p.default_value.clone(),
            });
        }
        for c in &self.components {
            c.flow
                .collect_settings(&format!("{prefix}{}.", c.role), out);
        }
    }

    /// Key the server uses to deduplicate flows.
    pub fn identity(&self) -> (String, String) {
        (canonical_flow_name(self), self.external_version.clone())
    }

    fn depth(&self) -> usize {
        1 + self
            .components
            .iter()
            .map(|c| c.flow.depth())
            .max()
            .unwrap_or(0)
    }
}

/// Canonical name of a flow tree: `name` for leaves, otherwise
/// `name(role=child,...)` with children rendered recursively in order.
pub fn canonical_flow_name(flow: &Flow) -> String {
    if flow.components.is_empty() {
        return flow.name.clone();
    }
    let children: Vec<String> = flow
        .components
        .iter()
        .map(|c| format!("{}={}", c.role, canonical_flow_name(&c.flow)))
        .collect();
    format!("{}({})", flow.name, children.join(","))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterSetting {
    pub path: String,
    pub value: String,
}

impl ParameterSetting {
    pub fn new(path: impl Into<String>, value: impl Into<String>) -> Self {
        ParameterSetting {
            path: path.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictionValue {
    Label(String),
    Real(f64),
}

impl fmt::Display for PredictionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionValue::Label(s) => f.write_str(s),
            PredictionValue::Real(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub repeat: u32,
    pub fold: u32,
    pub row_id: u64,
    pub prediction: PredictionValue,
    pub truth: PredictionValue,
    /// Aligned with the task's class labels; empty for regression.
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub repeat: u32,
    pub fold: u32,
    pub iteration: u32,
    /// `name=value;...` assignment evaluated at this iteration.
    pub setup_string: String,
    pub evaluation: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub id: Option<u64>,
    pub task_id: u64,
    /// Absent until the flow has been published and assigned an id.
    pub flow_id: Option<u64>,
    pub setup: Vec<ParameterSetting>,
    pub seed: u64,
    pub predictions: Vec<PredictionRow>,
    pub trace: Option<Trace>,
    pub local_evaluations: BTreeMap<String, f64>,
}

impl Run {
    /// Checks that every setup path resolves to a parameter of `flow`.
    pub fn validate_against_flow(&self, flow: &Flow) -> Vec<String> {
        self.setup
            .iter()
            .filter(|s| flow.resolve_parameter(&s.path).is_none())
            .map(|s| format!("setup path does not resolve in flow: {}", s.path))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suite {
    pub alias: String,
    pub name: String,
    pub task_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub run_id: u64,
    pub task_id: u64,
    pub flow_id: u64,
    pub function: String,
    pub value: f64,
    pub parameters: BTreeMap<String, String>,
}

/// Invariant checking for entity values.
pub trait Validate {
    /// Returns one message per violated invariant; empty means valid.
    fn validate(&self) -> Vec<String>;

    fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

fn is_md5_hex(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

fn check_positive(out: &mut Vec<String>, field: &str, id: Option<u64>) {
    if id == Some(0) {
        out.push(format!("{field} must be positive"));
    }
}

impl Validate for Feature {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.is_empty() {
            out.push(format!("feature {} has an empty name", self.index));
        }
        match (self.kind, self.nominal_values.is_empty()) {
            (FeatureKind::Nominal, true) => {
                out.push(format!("nominal feature has no values: {}", self.name))
            }
            (FeatureKind::Nominal, false) => {}
            (_, false) => out.push(format!(
                "non-nominal feature carries nominal values: {}",
                self.name
            )),
            (_, true) => {}
        }
        let mut seen = HashSet::new();
        for v in &self.nominal_values {
            if !seen.insert(v) {
                out.push(format!("nominal value not unique in {}: {v}", self.name));
            }
        }
        out
    }
}

impl Validate for DatasetDescription {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        check_positive(&mut out, "id", self.id);
        if self.name.is_empty() {
            out.push("name must not be empty".into());
        }
        if self.version == 0 {
            out.push("version must be positive".into());
        }
        if !is_md5_hex(&self.file_checksum) {
            out.push(format!(
                "file_checksum is not a hex MD5 digest: {:?}",
                self.file_checksum
            ));
        }
        let mut names = HashSet::new();
        for (i, f) in self.features.iter().enumerate() {
            if f.index != i {
                out.push(format!(
                    "feature indices must be contiguous from 0: {} at position {i}",
                    f.index
                ));
            }
            if !f.name.is_empty() && !names.insert(f.name.as_str()) {
                out.push(format!("feature name not unique: {}", f.name));
            }
            out.extend(f.validate());
        }
        if let Some(target) = &self.default_target_attribute {
            if self.feature(target).is_none() {
                out.push(format!(
                    "default_target_attribute names no feature: {target}"
                ));
            }
        }
        for (k, v) in &self.qualities {
            if !v.is_finite() {
                out.push(format!("quality {k} is not finite"));
            }
        }
        out
    }
}

impl Validate for EstimationProcedure {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.repeats < 1 {
            out.push("repeats must be >= 1".into());
        }
        match self.resampling {
            Resampling::CrossValidation { folds } if folds < 2 => {
                out.push("folds must be >= 2 for crossvalidation".into())
            }
            Resampling::Holdout { percentage } if !(percentage > 0.0 && percentage < 100.0) => {
                out.push("holdout percentage must lie in (0, 100)".into())
            }
            _ => {}
        }
        out
    }
}

impl Validate for Task {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        check_positive(&mut out, "id", self.id);
        if self.dataset_id == 0 {
            out.push("dataset_id must be positive".into());
        }
        if self.target_name.is_empty() {
            out.push("target_name must not be empty".into());
        }
        match self.task_type {
            TaskType::SupervisedClassification => {
                if self.class_labels.len() < 2 {
                    out.push("class_labels must have >= 2 entries".into());
                }
                let unique: HashSet<&String> = self.class_labels.iter().collect();
                if unique.len() != self.class_labels.len() {
                    out.push("class_labels must be unique".into());
                }
            }
            TaskType::SupervisedRegression => {
                if !self.class_labels.is_empty() {
                    out.push("regression tasks carry no class_labels".into());
                }
            }
        }
        out.extend(self.estimation_procedure.validate());
        out
    }
}

impl Flow {
    /// Validation with an explicit bound on tree depth.
    pub fn validate_with_depth(&self, max_depth: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.depth() > max_depth {
            out.push(format!("flow tree deeper than {max_depth} levels"));
            return out;
        }
        self.validate_node(&mut out);
        out
    }

    fn validate_node(&self, out: &mut Vec<String>) {
        check_positive(out, "id", self.id);
        if self.name.is_empty() {
            out.push("flow name must not be empty".into());
        } else if self.name.split('.').any(|seg| seg.is_empty()) {
            out.push(format!("flow name is not a dotted identifier: {}", self.name));
        }
        let mut params = HashSet::new();
        for p in &self.parameters {
            if !params.insert(p.name.as_str()) {
                out.push(format!("parameter name not unique: {}", p.name));
            }
        }
        let mut roles = HashSet::new();
        for c in &self.components {
            if !roles.insert(c.role.as_str()) {
                out.push(format!("component role not unique: {}", c.role));
            }
            c.flow.validate_node(out);
        }
    }
}

impl Validate for Flow {
    fn validate(&self) -> Vec<String> {
        self.validate_with_depth(DEFAULT_MAX_FLOW_DEPTH)
    }
}

impl Validate for PredictionRow {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.confidences.is_empty() {
            return out;
        }
        if self.confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
            out.push(format!(
                "confidence outside [0, 1] at row {}",
                self.row_id
            ));
        }
        let sum: f64 = self.confidences.iter().sum();
        if (sum - 1.0).abs() > CONFIDENCE_TOLERANCE {
            out.push(format!(
                "confidences at row {} sum to {sum}, not 1",
                self.row_id
            ));
        }
        out
    }
}

impl Validate for Trace {
    fn validate(&self) -> Vec<String> {
        let mut selected: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for r in &self.rows {
            let n = selected.entry((r.repeat, r.fold)).or_default();
            if r.selected {
                *n += 1;
            }
        }
        selected
            .into_iter()
            .filter(|(_, n)| *n != 1)
            .map(|((repeat, fold), n)| {
                format!("trace has {n} selected rows for repeat {repeat} fold {fold}, expected 1")
            })
            .collect()
    }
}

impl Validate for Run {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        check_positive(&mut out, "id", self.id);
        check_positive(&mut out, "flow_id", self.flow_id);
        if self.task_id == 0 {
            out.push("task_id must be positive".into());
        }
        let mut triples = HashSet::new();
        for p in &self.predictions {
            if !triples.insert((p.repeat, p.fold, p.row_id)) {
                out.push(format!(
                    "duplicate prediction for repeat {} fold {} row {}",
                    p.repeat, p.fold, p.row_id
                ));
            }
            out.extend(p.validate());
        }
        let mut paths = HashSet::new();
        for s in &self.setup {
            if !paths.insert(s.path.as_str()) {
                out.push(format!("setup path not unique: {}", s.path));
            }
        }
        if let Some(trace) = &self.trace {
            out.extend(trace.validate());
        }
        for (k, v) in &self.local_evaluations {
            if !v.is_finite() {
                out.push(format!("local evaluation {k} is not finite"));
            }
        }
        out
    }
}

impl Validate for Suite {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.alias.is_empty() {
            out.push("alias must not be empty".into());
        }
        if self.task_ids.is_empty() {
            out.push("task_ids must not be empty".into());
        }
        let mut seen = BTreeSet::new();
        for id in &self.task_ids {
            if *id == 0 {
                out.push("task ids must be positive".into());
            }
            if !seen.insert(id) {
                out.push(format!("task id not unique: {id}"));
            }
        }
        out
    }
}

impl Validate for EvaluationRecord {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.run_id == 0 || self.task_id == 0 || self.flow_id == 0 {
            out.push("run_id, task_id and flow_id must be positive".into());
        }
        if self.function.is_empty() {
            out.push("function must not be empty".into());
        }
        if !self.value.is_finite() {
            out.push("value must be finite".into());
        }
        out
    }
}
