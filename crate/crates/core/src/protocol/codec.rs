//! Entity <-> XML document mapping. One root element per entity kind,
//! lower_snake_case child elements, repeated elements for lists.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::arff::{ArffDocument, Attribute, AttributeKind, Row, Value};
use crate::entities::*;

use super::xml::{self, Element};
use super::DecodeError;

/// Any entity that travels as a single XML document.
#[derive(Debug, Clone, PartialEq)]
pub enum Entity {
    Dataset(DatasetDescription),
    Task(Task),
    Flow(Flow),
    Run(Run),
    Suite(Suite),
}

impl Entity {
    pub fn kind(&self) -> EntityKind {
        match self {
            Entity::Dataset(_) => EntityKind::Dataset,
            Entity::Task(_) => EntityKind::Task,
            Entity::Flow(_) => EntityKind::Flow,
            Entity::Run(_) => EntityKind::Run,
            Entity::Suite(_) => EntityKind::Suite,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        match self {
            Entity::Dataset(e) => e.validate(),
            Entity::Task(e) => e.validate(),
            Entity::Flow(e) => e.validate(),
            Entity::Run(e) => e.validate(),
            Entity::Suite(e) => e.validate(),
        }
    }

    pub fn to_element(&self) -> Element {
        match self {
            Entity::Dataset(e) => dataset_to_xml(e),
            Entity::Task(e) => task_to_xml(e),
            Entity::Flow(e) => flow_to_xml(e),
            Entity::Run(e) => run_to_xml(e),
            Entity::Suite(e) => suite_to_xml(e),
        }
    }

    pub fn to_xml(&self) -> String {
        self.to_element().to_xml()
    }

    /// Decodes a document of the expected kind. Documents that decode to an
    /// invalid entity are rejected.
    pub fn decode(kind: EntityKind, bytes: &[u8]) -> Result<Entity, DecodeError> {
        let el = xml::parse(bytes)?;
        let entity = Entity::decode_unchecked(kind, &el)?;
        let problems = entity.validate();
        if !problems.is_empty() {
            return Err(DecodeError::new(format!("invalid {kind}: {}", problems.join("; "))));
        }
        Ok(entity)
    }

    pub fn decode_unchecked(kind: EntityKind, el: &Element) -> Result<Entity, DecodeError> {
        Ok(match kind {
            EntityKind::Dataset => Entity::Dataset(dataset_from_xml(el)?),
            EntityKind::Task => Entity::Task(task_from_xml(el)?),
            EntityKind::Flow => Entity::Flow(flow_from_xml(el)?),
            EntityKind::Run => Entity::Run(run_from_xml(el)?),
            EntityKind::Suite => Entity::Suite(suite_from_xml(el)?),
        })
    }
}

// ---- decoding helpers ----

fn expect_root(el: &Element, name: &str) -> Result<(), DecodeError> {
    if el.name == name {
        Ok(())
    } else {
        Err(DecodeError::new(format!("expected <{name}> root, found <{}>", el.name)))
    }
}

fn req<'a>(el: &'a Element, name: &str) -> Result<&'a str, DecodeError> {
    el.text_of(name)
        .ok_or_else(|| DecodeError::new(format!("<{}> lacks <{name}>", el.name)))
}

fn req_parse<T: FromStr>(el: &Element, name: &str) -> Result<T, DecodeError> {
    let text = req(el, name)?;
    text.trim()
        .parse()
        .map_err(|_| DecodeError::new(format!("<{}>/<{name}> has invalid value {text:?}", el.name)))
}

fn opt_parse<T: FromStr>(el: &Element, name: &str) -> Result<Option<T>, DecodeError> {
    match el.child(name) {
        None => Ok(None),
        Some(_) => req_parse(el, name).map(Some),
    }
}

fn texts(el: &Element, name: &str) -> Vec<String> {
    el.children_named(name).map(|c| c.text.clone()).collect()
}

fn bool_text(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn parse_bool(el: &Element, name: &str) -> Result<bool, DecodeError> {
    match req(el, name)?.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(DecodeError::new(format!("<{name}> is not a boolean: {other:?}"))),
    }
}

// ---- dataset ----

pub fn feature_to_xml(f: &Feature) -> Element {
    let mut el = Element::new("feature")
        .leaf("index", f.index)
        .leaf("name", &f.name)
        .leaf("data_type", f.kind.as_str());
    for v in &f.nominal_values {
        el.push(Element::text_node("nominal_value", v));
    }
    el.leaf("number_of_missing_values", f.missing_count)
}

pub fn feature_from_xml(el: &Element) -> Result<Feature, DecodeError> {
    let kind_text = req(el, "data_type")?;
    Ok(Feature {
        index: req_parse(el, "index")?,
        name: req(el, "name")?.to_string(),
        kind: FeatureKind::parse(kind_text)
            .ok_or_else(|| DecodeError::new(format!("unknown data_type {kind_text:?}")))?,
        nominal_values: texts(el, "nominal_value"),
        missing_count: req_parse(el, "number_of_missing_values")?,
    })
}

pub fn dataset_to_xml(d: &DatasetDescription) -> Element {
    let mut el = Element::new("dataset")
        .opt_leaf("id", d.id)
        .leaf("name", &d.name)
        .leaf("version", d.version)
        .opt_leaf("default_target_attribute", d.default_target_attribute.as_ref())
        .leaf("file_checksum", &d.file_checksum);
    for f in &d.features {
        el.push(feature_to_xml(f));
    }
    for (k, v) in &d.qualities {
        el.push(Element::new("quality").leaf("name", k).leaf("value", v));
    }
    el
}

pub fn dataset_from_xml(el: &Element) -> Result<DatasetDescription, DecodeError> {
    expect_root(el, "dataset")?;
    let mut qualities = BTreeMap::new();
    for q in el.children_named("quality") {
        qualities.insert(req(q, "name")?.to_string(), req_parse(q, "value")?);
    }
    Ok(DatasetDescription {
        id: opt_parse(el, "id")?,
        name: req(el, "name")?.to_string(),
        version: req_parse(el, "version")?,
        default_target_attribute: el.text_of("default_target_attribute").map(str::to_string),
        // Drafts for upload may omit it; validation rejects the empty value.
        file_checksum: el.text_of("file_checksum").unwrap_or_default().to_string(),
        features: el
            .children_named("feature")
            .map(feature_from_xml)
            .collect::<Result<_, _>>()?,
        qualities,
    })
}

pub fn features_to_xml(features: &[Feature]) -> Element {
    let mut el = Element::new("data_features");
    for f in features {
        el.push(feature_to_xml(f));
    }
    el
}

pub fn features_from_xml(el: &Element) -> Result<Vec<Feature>, DecodeError> {
    expect_root(el, "data_features")?;
    el.children_named("feature").map(feature_from_xml).collect()
}

// ---- task ----

pub fn task_to_xml(t: &Task) -> Element {
    let ep = &t.estimation_procedure;
    let mut proc_el = Element::new("estimation_procedure");
    proc_el = match ep.resampling {
        Resampling::CrossValidation { folds } => proc_el
            .leaf("type", "crossvalidation")
            .leaf("repeats", ep.repeats)
            .leaf("folds", folds),
        Resampling::Holdout { percentage } => proc_el
            .leaf("type", "holdout")
            .leaf("repeats", ep.repeats)
            .leaf("percentage", percentage),
    };
    proc_el = proc_el.leaf("splits_ref", &ep.splits_ref);
    let mut el = Element::new("task")
        .opt_leaf("id", t.id)
        .leaf("task_type", t.task_type.as_str())
        .leaf("dataset_id", t.dataset_id)
        .leaf("target_name", &t.target_name)
        .child_el(proc_el);
    for l in &t.class_labels {
        el.push(Element::text_node("class_label", l));
    }
    el
}

pub fn task_from_xml(el: &Element) -> Result<Task, DecodeError> {
    expect_root(el, "task")?;
    let type_text = req(el, "task_type")?;
    let p = el
        .child("estimation_procedure")
        .ok_or_else(|| DecodeError::new("<task> lacks <estimation_procedure>"))?;
    let resampling = match req(p, "type")? {
        "crossvalidation" => Resampling::CrossValidation { folds: req_parse(p, "folds")? },
        "holdout" => Resampling::Holdout { percentage: req_parse(p, "percentage")? },
        other => return Err(DecodeError::new(format!("unknown estimation procedure {other:?}"))),
    };
    Ok(Task {
        id: opt_parse(el, "id")?,
        task_type: TaskType::parse(type_text)
            .ok_or_else(|| DecodeError::new(format!("unknown task_type {type_text:?}")))?,
        dataset_id: req_parse(el, "dataset_id")?,
        target_name: req(el, "target_name")?.to_string(),
        estimation_procedure: EstimationProcedure {
            resampling,
            repeats: req_parse(p, "repeats")?,
            splits_ref: p.text_of("splits_ref").unwrap_or_default().to_string(),
        },
        class_labels: texts(el, "class_label"),
    })
}

// ---- flow ----

pub fn flow_to_xml(f: &Flow) -> Element {
    let mut el = Element::new("flow")
        .opt_leaf("id", f.id)
        .leaf("name", &f.name)
        .leaf("external_version", &f.external_version)
        .leaf("dependencies", &f.dependencies);
    for p in &f.parameters {
        el.push(
            Element::new("parameter")
                .leaf("name", &p.name)
                .leaf("default_value", &p.default_value)
                .leaf("data_type", &p.kind),
        );
    }
    for c in &f.components {
        el.push(
            Element::new("component")
                .leaf("identifier", &c.role)
                .child_el(flow_to_xml(&c.flow)),
        );
    }
    el
}

pub fn flow_from_xml(el: &Element) -> Result<Flow, DecodeError> {
    flow_from_xml_depth(el, 0)
}

fn flow_from_xml_depth(el: &Element, depth: usize) -> Result<Flow, DecodeError> {
    expect_root(el, "flow")?;
    // Deeper trees than validation accepts are refused while decoding.
    if depth > DEFAULT_MAX_FLOW_DEPTH {
        return Err(DecodeError::new("flow nesting exceeds the depth limit"));
    }
    let parameters = el
        .children_named("parameter")
        .map(|p| {
            Ok(FlowParameter {
                name: req(p, "name")?.to_string(),
                default_value: req(p, "default_value")?.to_string(),
                kind: req(p, "data_type")?.to_string(),
            })
        })
        .collect::<Result<_, DecodeError>>()?;
    let components = el
        .children_named("component")
        .map(|c| {
            let child = c
                .child("flow")
                .ok_or_else(|| DecodeError::new("<component> lacks <flow>"))?;
            Ok(FlowComponent {
                role: req(c, "identifier")?.to_string(),
                flow: flow_from_xml_depth(child, depth + 1)?,
            })
        })
        .collect::<Result<_, DecodeError>>()?;
    Ok(Flow {
        id: opt_parse(el, "id")?,
        name: req(el, "name")?.to_string(),
        external_version: req(el, "external_version")?.to_string(),
        parameters,
        components,
        dependencies: el.text_of("dependencies").unwrap_or_default().to_string(),
    })
}

// ---- run ----

/// Run document. Predictions travel separately as an ARFF file.
pub fn run_to_xml(r: &Run) -> Element {
    let mut el = Element::new("run")
        .opt_leaf("id", r.id)
        .leaf("task_id", r.task_id)
        .opt_leaf("flow_id", r.flow_id)
        .leaf("seed", r.seed);
    for s in &r.setup {
        el.push(
            Element::new("parameter_setting")
                .leaf("name", &s.path)
                .leaf("value", &s.value),
        );
    }
    for (k, v) in &r.local_evaluations {
        el.push(Element::new("evaluation").leaf("name", k).leaf("value", v));
    }
    if let Some(trace) = &r.trace {
        let mut t = Element::new("trace");
        for row in &trace.rows {
            t.push(
                Element::new("trace_iteration")
                    .leaf("repeat", row.repeat)
                    .leaf("fold", row.fold)
                    .leaf("iteration", row.iteration)
                    .leaf("setup_string", &row.setup_string)
                    .leaf("evaluation", row.evaluation)
                    .leaf("selected", bool_text(row.selected)),
            );
        }
        el.push(t);
    }
    el
}

pub fn run_from_xml(el: &Element) -> Result<Run, DecodeError> {
    expect_root(el, "run")?;
    let setup = el
        .children_named("parameter_setting")
        .map(|s| Ok(ParameterSetting::new(req(s, "name")?, req(s, "value")?)))
        .collect::<Result<_, DecodeError>>()?;
    let mut local_evaluations = BTreeMap::new();
    for e in el.children_named("evaluation") {
        local_evaluations.insert(req(e, "name")?.to_string(), req_parse(e, "value")?);
    }
    let trace = match el.child("trace") {
        None => None,
        Some(t) => Some(Trace {
            rows: t
                .children_named("trace_iteration")
                .map(|row| {
                    Ok(TraceRow {
                        repeat: req_parse(row, "repeat")?,
                        fold: req_parse(row, "fold")?,
                        iteration: req_parse(row, "iteration")?,
                        setup_string: req(row, "setup_string")?.to_string(),
                        evaluation: req_parse(row, "evaluation")?,
                        selected: parse_bool(row, "selected")?,
                    })
                })
                .collect::<Result<_, DecodeError>>()?,
        }),
    };
    Ok(Run {
        id: opt_parse(el, "id")?,
        task_id: req_parse(el, "task_id")?,
        flow_id: opt_parse(el, "flow_id")?,
        setup,
        seed: req_parse(el, "seed")?,
        predictions: Vec::new(),
        trace,
        local_evaluations,
    })
}

// ---- suite ----

pub fn suite_to_xml(s: &Suite) -> Element {
    let mut el = Element::new("study").leaf("alias", &s.alias).leaf("name", &s.name);
    for id in &s.task_ids {
        el.push(Element::text_node("task_id", id));
    }
    el
}

pub fn suite_from_xml(el: &Element) -> Result<Suite, DecodeError> {
    expect_root(el, "study")?;
    Ok(Suite {
        alias: req(el, "alias")?.to_string(),
        name: req(el, "name")?.to_string(),
        task_ids: el
            .children_named("task_id")
            .map(|c| {
                c.text
                    .trim()
                    .parse()
                    .map_err(|_| DecodeError::new(format!("invalid task_id {:?}", c.text)))
            })
            .collect::<Result<_, _>>()?,
    })
}

// ---- evaluations ----

pub fn evaluations_to_xml(records: &[EvaluationRecord]) -> Element {
    let mut el = Element::new("evaluations");
    for r in records {
        let mut e = Element::new("evaluation")
            .leaf("run_id", r.run_id)
            .leaf("task_id", r.task_id)
            .leaf("flow_id", r.flow_id)
            .leaf("function", &r.function)
            .leaf("value", r.value);
        for (k, v) in &r.parameters {
            e.push(Element::new("parameter").leaf("name", k).leaf("value", v));
        }
        el.push(e);
    }
    el
}

pub fn evaluations_from_xml(el: &Element) -> Result<Vec<EvaluationRecord>, DecodeError> {
    expect_root(el, "evaluations")?;
    el.children_named("evaluation")
        .map(|e| {
            let mut parameters = BTreeMap::new();
            for p in e.children_named("parameter") {
                parameters.insert(req(p, "name")?.to_string(), req(p, "value")?.to_string());
            }
            Ok(EvaluationRecord {
                run_id: req_parse(e, "run_id")?,
                task_id: req_parse(e, "task_id")?,
                flow_id: req_parse(e, "flow_id")?,
                function: req(e, "function")?.to_string(),
                value: req_parse(e, "value")?,
                parameters,
            })
        })
        .collect()
}

// ---- listings and upload responses ----

/// One row of a listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySummary {
    pub id: u64,
    pub name: String,
    pub fields: BTreeMap<String, String>,
}

pub fn summaries_to_xml(kind: EntityKind, items: &[EntitySummary]) -> Element {
    let mut el = Element::new(format!("{}_list", kind.as_str()));
    for s in items {
        let mut e = Element::new("summary").leaf("id", s.id).leaf("name", &s.name);
        for (k, v) in &s.fields {
            e.push(Element::new("field").leaf("name", k).leaf("value", v));
        }
        el.push(e);
    }
    el
}

pub fn summaries_from_xml(kind: EntityKind, el: &Element) -> Result<Vec<EntitySummary>, DecodeError> {
    expect_root(el, &format!("{}_list", kind.as_str()))?;
    el.children_named("summary")
        .map(|s| {
            let mut fields = BTreeMap::new();
            for f in s.children_named("field") {
                fields.insert(req(f, "name")?.to_string(), req(f, "value")?.to_string());
            }
            Ok(EntitySummary {
                id: req_parse(s, "id")?,
                name: req(s, "name")?.to_string(),
                fields,
            })
        })
        .collect()
}

pub fn upload_response(id: u64) -> String {
    Element::new("upload").leaf("id", id).to_xml()
}

pub fn upload_id_from_xml(el: &Element) -> Result<u64, DecodeError> {
    expect_root(el, "upload")?;
    req_parse(el, "id")
}

// ---- predictions (ARFF) ----

/// Prediction file for a run on `task_id`. Classification predictions use
/// nominal `prediction`/`correct` columns over `class_labels` followed by
/// one `confidence.{label}` column per label; regression uses numeric
/// columns and no confidences.
pub fn predictions_to_arff(task_id: u64, class_labels: &[String], rows: &[PredictionRow]) -> ArffDocument {
    let mut attributes = vec![
        Attribute::numeric("repeat"),
        Attribute::numeric("fold"),
        Attribute::numeric("row_id"),
    ];
    if class_labels.is_empty() {
        attributes.push(Attribute::numeric("prediction"));
        attributes.push(Attribute::numeric("correct"));
    } else {
        attributes.push(Attribute::nominal("prediction", class_labels.iter().cloned()));
        attributes.push(Attribute::nominal("correct", class_labels.iter().cloned()));
        for l in class_labels {
            attributes.push(Attribute::numeric(format!("confidence.{l}")));
        }
    }
    let mut doc = ArffDocument::new(format!("openml_task_{task_id}_predictions"), attributes);
    let cell = |v: &PredictionValue| match v {
        PredictionValue::Label(s) => Value::Text(s.clone()),
        PredictionValue::Real(x) => Value::Number(*x),
    };
    for r in rows {
        let mut cells = vec![
            Value::Number(r.repeat as f64),
            Value::Number(r.fold as f64),
            Value::Number(r.row_id as f64),
            cell(&r.prediction),
            cell(&r.truth),
        ];
        if !class_labels.is_empty() {
            cells.extend(r.confidences.iter().map(|c| Value::Number(*c)));
        }
        doc.rows.push(Row::Dense(cells));
    }
    doc
}

/// Inverse of [`predictions_to_arff`]; returns the class labels and rows.
pub fn predictions_from_arff(doc: &ArffDocument) -> Result<(Vec<String>, Vec<PredictionRow>), DecodeError> {
    let col = |name: &str| {
        doc.attribute_index(name)
            .ok_or_else(|| DecodeError::new(format!("prediction file lacks column {name}")))
    };
    let (repeat_i, fold_i, row_i, pred_i, truth_i) =
        (col("repeat")?, col("fold")?, col("row_id")?, col("prediction")?, col("correct")?);
    let labels = match &doc.attributes[pred_i].kind {
        AttributeKind::Nominal(values) => values.clone(),
        AttributeKind::Numeric => Vec::new(),
        _ => return Err(DecodeError::new("prediction column must be nominal or numeric")),
    };
    let conf_cols = labels
        .iter()
        .map(|l| col(&format!("confidence.{l}")))
        .collect::<Result<Vec<_>, _>>()?;
    let int = |v: &Value, what: &str| -> Result<u64, DecodeError> {
        match v.as_number() {
            Some(x) if x >= 0.0 && x.fract() == 0.0 => Ok(x as u64),
            _ => Err(DecodeError::new(format!("{what} is not a non-negative integer"))),
        }
    };
    let target = |v: &Value| -> Result<PredictionValue, DecodeError> {
        match v {
            Value::Text(s) => Ok(PredictionValue::Label(s.clone())),
            Value::Number(x) => Ok(PredictionValue::Real(*x)),
            Value::Missing => Err(DecodeError::new("missing prediction or truth value")),
        }
    };
    let mut rows = Vec::with_capacity(doc.rows.len());
    for i in 0..doc.rows.len() {
        let cells = doc.dense_row(i);
        rows.push(PredictionRow {
            repeat: int(&cells[repeat_i], "repeat")? as u32,
            fold: int(&cells[fold_i], "fold")? as u32,
            row_id: int(&cells[row_i], "row_id")?,
            prediction: target(&cells[pred_i])?,
            truth: target(&cells[truth_i])?,
            confidences: conf_cols
                .iter()
                .map(|&j| {
                    cells[j]
                        .as_number()
                        .ok_or_else(|| DecodeError::new(format!("row {i} has a missing confidence")))
                })
                .collect::<Result<_, _>>()?,
        });
    }
    Ok((labels, rows))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn roundtrip(e: &Entity) -> Entity {
        Entity::decode(e.kind(), e.to_xml().as_bytes()).unwrap()
    }

    #[test]
    fn dataset_draft_without_checksum() {
        let draft = b"<dataset><name>d</name><version>1</version></dataset>";
        let el = xml::parse(draft).unwrap();
        match Entity::decode_unchecked(EntityKind::Dataset, &el).unwrap() {
            Entity::Dataset(d) => assert_eq!(d.file_checksum, ""),
            other => panic!("{other:?}"),
        }
        let e = Entity::decode(EntityKind::Dataset, draft).unwrap_err();
        assert!(e.message.contains("file_checksum"), "{}", e.message);
    }

    fn text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 _.<>&'\"-]{1,12}"
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e9f64..1e9, Just(0.1), Just(1e-300), Just(-0.0)]
    }

    fn arb_flow(depth: u32) -> BoxedStrategy<Flow> {
        let leaf = (
            proptest::option::of(1u64..100_000),
            "[a-z]{1,6}(\\.[a-z]{1,6}){0,2}",
            text(),
            proptest::collection::vec((text(), text(), text()), 0..3),
            text(),
        )
            .prop_map(|(id, name, ext, params, deps)| Flow {
                id,
                name,
                external_version: ext,
                parameters: params
                    .into_iter()
                    .enumerate()
                    .map(|(i, (n, d, k))| FlowParameter { name: format!("{n}{i}"), default_value: d, kind: k })
                    .collect(),
                components: vec![],
                dependencies: deps,
            });
        if depth == 0 {
            return leaf.boxed();
        }
        (leaf, proptest::collection::vec(arb_flow(depth - 1), 0..3))
            .prop_map(|(mut f, children)| {
                f.components = children
                    .into_iter()
                    .enumerate()
                    .map(|(i, flow)| FlowComponent { role: format!("role{i}"), flow })
                    .collect();
                f
            })
            .boxed()
    }

    fn arb_dataset() -> impl Strategy<Value = DatasetDescription> {
        (
            proptest::option::of(1u64..1_000_000),
            text(),
            1u32..5,
            "[0-9a-f]{32}",
            proptest::collection::vec((text(), proptest::collection::btree_set(text(), 0..3), 0u64..9), 0..5),
            proptest::collection::btree_map(text(), finite(), 0..3),
        )
            .prop_map(|(id, name, version, checksum, feats, qualities)| {
                let features: Vec<Feature> = feats
                    .into_iter()
                    .enumerate()
                    .map(|(index, (n, values, missing))| Feature {
                        index,
                        name: format!("{n}{index}"),
                        kind: if values.is_empty() { FeatureKind::Numeric } else { FeatureKind::Nominal },
                        nominal_values: values.into_iter().collect(),
                        missing_count: missing,
                    })
                    .collect();
                DatasetDescription {
                    id,
                    name,
                    version,
                    default_target_attribute: features.first().map(|f| f.name.clone()),
                    file_checksum: checksum,
                    features,
                    qualities,
                }
            })
    }

    fn arb_task() -> impl Strategy<Value = Task> {
        (
            proptest::option::of(1u64..1000),
            1u64..1000,
            text(),
            prop_oneof![
                (2u32..11).prop_map(|folds| Resampling::CrossValidation { folds }),
                (1.0f64..99.0).prop_map(|percentage| Resampling::Holdout { percentage }),
            ],
            1u32..4,
            proptest::collection::btree_set(text(), 2..5),
        )
            .prop_map(|(id, dataset_id, target, resampling, repeats, labels)| Task {
                id,
                task_type: TaskType::SupervisedClassification,
                dataset_id,
                target_name: target,
                estimation_procedure: EstimationProcedure {
                    resampling,
                    repeats,
                    splits_ref: format!("task/splits/{dataset_id}"),
                },
                class_labels: labels.into_iter().collect(),
            })
    }

    fn arb_run() -> impl Strategy<Value = Run> {
        (
            proptest::option::of(1u64..1000),
            1u64..1000,
            proptest::option::of(1u64..1000),
            proptest::collection::vec((text(), text()), 0..4),
            any::<u64>(),
            proptest::option::of(proptest::collection::vec((0u32..3, text(), finite()), 1..4)),
            proptest::collection::btree_map(text(), finite(), 0..3),
        )
            .prop_map(|(id, task_id, flow_id, setup, seed, trace, evals)| Run {
                id,
                task_id,
                flow_id,
                setup: setup
                    .into_iter()
                    .enumerate()
                    .map(|(i, (p, v))| ParameterSetting::new(format!("{p}{i}"), v))
                    .collect(),
                seed,
                predictions: vec![],
                // one grid per fold, first point selected
                trace: trace.map(|grid| Trace {
                    rows: (0..2u32)
                        .flat_map(|fold| {
                            grid.iter().enumerate().map(move |(i, (_, setup_string, evaluation))| TraceRow {
                                repeat: 0,
                                fold,
                                iteration: i as u32,
                                setup_string: setup_string.clone(),
                                evaluation: *evaluation,
                                selected: i == 0,
                            })
                        })
                        .collect(),
                }),
                local_evaluations: evals,
            })
    }

    proptest! {
        #[test]
        fn dataset_roundtrip(d in arb_dataset()) {
            let e = Entity::Dataset(d);
            prop_assert_eq!(roundtrip(&e), e);
        }

        #[test]
        fn task_roundtrip(t in arb_task()) {
            let e = Entity::Task(t);
            prop_assert_eq!(roundtrip(&e), e);
        }

        #[test]
        fn flow_roundtrip(f in arb_flow(3)) {
            let e = Entity::Flow(f);
            prop_assert_eq!(roundtrip(&e), e);
        }

        #[test]
        fn run_roundtrip(r in arb_run()) {
            let e = Entity::Run(r);
            prop_assert_eq!(roundtrip(&e), e);
        }

        #[test]
        fn suite_roundtrip(alias in "[A-Za-z0-9-]{1,12}", name in text(), ids in proptest::collection::btree_set(1u64..10_000, 1..6)
            .prop_map(|s| s.into_iter().collect::<Vec<_>>())
            .prop_shuffle()) {
            // suite task ids are unique but not necessarily sorted
            let e = Entity::Suite(Suite { alias, name, task_ids: ids });
            prop_assert_eq!(roundtrip(&e), e);
        }

        #[test]
        fn evaluations_roundtrip(v in finite(), params in proptest::collection::btree_map(text(), text(), 0..4)) {
            let records = vec![EvaluationRecord {
                run_id: 1, task_id: 6, flow_id: 8353,
                function: "predictive_accuracy".into(), value: v, parameters: params,
            }];
            let el = xml::parse(evaluations_to_xml(&records).to_xml().as_bytes()).unwrap();
            prop_assert_eq!(evaluations_from_xml(&el).unwrap(), records);
        }
    }

    #[test]
    fn predictions_roundtrip_through_arff_text() {
        let labels = vec!["A".to_string(), "B".to_string()];
        let rows = vec![PredictionRow {
            repeat: 0,
            fold: 1,
            row_id: 7,
            prediction: PredictionValue::Label("B".into()),
            truth: PredictionValue::Label("A".into()),
            confidences: vec![0.25, 0.75],
        }];
        let doc = predictions_to_arff(6, &labels, &rows);
        let text = crate::arff::serialize(&doc);
        assert!(text.starts_with("@RELATION openml_task_6_predictions\n"));
        let back = crate::arff::parse(&text).unwrap();
        assert_eq!(predictions_from_arff(&back).unwrap(), (labels, rows));
    }

    #[test]
    fn invalid_entities_are_rejected_on_decode() {
        let mut t = Task {
            id: Some(6),
            task_type: TaskType::SupervisedClassification,
            dataset_id: 6,
            target_name: "class".into(),
            estimation_procedure: EstimationProcedure::cross_validation(1, 10),
            class_labels: vec!["A".into()],
        };
        let xml = task_to_xml(&t).to_xml();
        let err = Entity::decode(EntityKind::Task, xml.as_bytes()).unwrap_err();
        assert!(err.message.contains("class_labels must have >= 2 entries"));
        t.class_labels.push("B".into());
        assert!(Entity::decode(EntityKind::Task, task_to_xml(&t).to_xml().as_bytes()).is_ok());
    }

    #[test]
    fn wrong_root_is_a_decode_error() {
        let xml = suite_to_xml(&Suite { alias: "a".into(), name: "b".into(), task_ids: vec![1] }).to_xml();
        assert!(Entity::decode(EntityKind::Task, xml.as_bytes()).is_err());
    }

    #[test]
    fn field_names_are_snake_case_children() {
        let t = Task {
            id: Some(6),
            task_type: TaskType::SupervisedClassification,
            dataset_id: 6,
            target_name: "class".into(),
            estimation_procedure: EstimationProcedure::cross_validation(1, 10),
            class_labels: vec!["A".into(), "B".into()],
        };
        let xml = task_to_xml(&t).to_xml();
        assert!(xml.contains("<dataset_id>6</dataset_id>"));
        assert!(xml.contains("<class_label>A</class_label>\n  <class_label>B</class_label>"));
    }
}
