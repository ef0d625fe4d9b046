//! In-memory server state: fixtures loaded at start, uploads added on top.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use omlclient::arff::{self, coerce_table, feature_summary, DataTable};
use omlclient::cache::{cache_path, md5_hex, Artifact};
use omlclient::entities::*;
use omlclient::protocol::routes::{self, decode_segment, EntityKey};
use omlclient::protocol::{codec, codes, encode_error, multipart, Entity, EntitySummary, MAX_LIST_LIMIT};
use omlclient::runner::{iter_splits_for, make_splits, PREDICTIVE_ACCURACY};

use crate::MockError;

/// First id handed out for uploads of each kind.
pub const FIRST_UPLOAD_ID: u64 = 10_000;

/// Largest accepted gap between the uploaded and the recomputed accuracy.
pub const ACCURACY_TOLERANCE: f64 = 1e-9;

pub const ERRORS_FILE: &str = "errors.tsv";
pub const EVALUATIONS_FILE: &str = "evaluations.xml";

#[derive(Debug, Clone)]
pub(crate) struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Reply {
    fn xml(body: String) -> Reply {
        Reply {
            status: 200,
            content_type: "application/xml",
            body: body.into_bytes(),
        }
    }

    fn arff(body: Vec<u8>) -> Reply {
        Reply {
            status: 200,
            content_type: "text/plain",
            body,
        }
    }

    pub fn error(status: u16, code: u32, message: &str) -> Reply {
        Reply {
            status,
            content_type: "application/xml",
            body: encode_error(code, message).into_bytes(),
        }
    }
}

struct StoredDataset {
    description: DatasetDescription,
    payload: Vec<u8>,
    table: DataTable,
}

struct StoredTask {
    task: Task,
    splits: Vec<u8>,
}

struct StoredRun {
    run: Run,
    predictions: Vec<u8>,
}

pub(crate) struct Store {
    datasets: BTreeMap<u64, StoredDataset>,
    tasks: BTreeMap<u64, StoredTask>,
    flows: BTreeMap<u64, Flow>,
    flow_index: HashMap<(String, String), u64>,
    runs: BTreeMap<u64, StoredRun>,
    suites: BTreeMap<String, Suite>,
    evaluations: Vec<EvaluationRecord>,
    /// code -> (http status, message)
    errors: BTreeMap<u32, (u16, String)>,
    next_ids: BTreeMap<EntityKind, u64>,
}

fn fixture_err(path: &Path, message: impl Into<String>) -> MockError {
    MockError::Fixture {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, MockError> {
    fs::read(path).map_err(|e| fixture_err(path, e.to_string()))
}

fn read_text(path: &Path) -> Result<String, MockError> {
    String::from_utf8(read(path)?).map_err(|_| fixture_err(path, "not UTF-8"))
}

/// Entity directories of one kind, sorted by name.
fn entity_dirs(root: &Path, kind: EntityKind) -> Result<Vec<(EntityKey, PathBuf)>, MockError> {
    let dir = root.join(kind.as_str());
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| fixture_err(&dir, e.to_string()))? {
        let entry = entry.map_err(|e| fixture_err(&dir, e.to_string()))?;
        if entry.path().is_dir() {
            let name = decode_segment(&entry.file_name().to_string_lossy());
            let key = match kind {
                EntityKind::Suite => EntityKey::Alias(name),
                _ => EntityKey::Id(name.parse().map_err(|_| fixture_err(&entry.path(), "directory name is not an id"))?),
            };
            out.push((key, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn artifact_path(root: &Path, kind: EntityKind, key: &EntityKey, artifact: Artifact) -> PathBuf {
    root.join(cache_path("", kind, key, artifact))
}

fn parse_errors(path: &Path) -> Result<BTreeMap<u32, (u16, String)>, MockError> {
    let mut out = BTreeMap::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        let bad = || fixture_err(path, format!("line {}: expected code<TAB>http_status<TAB>message", n + 1));
        if cols.len() != 3 {
            return Err(bad());
        }
        let code = cols[0].trim().parse().map_err(|_| bad())?;
        let status = cols[1].trim().parse().map_err(|_| bad())?;
        out.insert(code, (status, cols[2].to_string()));
    }
    for code in [
        codes::UNKNOWN_ROUTE,
        codes::UPLOAD_VALIDATION,
        codes::AUTHENTICATION_FAILED,
        codes::UNKNOWN_DATASET,
        codes::UNKNOWN_TASK,
        codes::UNKNOWN_FLOW,
        codes::UNKNOWN_RUN,
        codes::UNKNOWN_MEASURE,
        codes::UNKNOWN_STUDY,
    ] {
        if !out.contains_key(&code) {
            return Err(fixture_err(path, format!("missing error code {code}")));
        }
    }
    Ok(out)
}

fn decode_entity(path: &Path, kind: EntityKind) -> Result<Entity, MockError> {
    Entity::decode(kind, &read(path)?).map_err(|e| fixture_err(path, e.message))
}

/// Checks an uploaded or bundled payload against its description and
/// returns the coerced table.
fn check_payload(description: &DatasetDescription, payload: &[u8]) -> Result<DataTable, String> {
    let actual = md5_hex(payload);
    if actual != description.file_checksum {
        return Err(format!(
            "payload checksum {actual} does not match file_checksum {}",
            description.file_checksum
        ));
    }
    let text = std::str::from_utf8(payload).map_err(|_| "payload is not UTF-8".to_string())?;
    let doc = arff::parse(text).map_err(|e| e.to_string())?;
    if feature_summary(&doc) != description.features {
        return Err("features do not match the payload".into());
    }
    Ok(coerce_table(&doc))
}

fn check_task(task: &Task, dataset: &StoredDataset, splits: &[u8]) -> Result<(), String> {
    let problems = task.validate_against(&dataset.description);
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    let text = std::str::from_utf8(splits).map_err(|_| "split table is not UTF-8".to_string())?;
    let doc = arff::parse(text).map_err(|e| e.to_string())?;
    iter_splits_for(task, &doc, dataset.table.row_count).map_err(|e| e.to_string())?;
    Ok(())
}

fn dataset_summary(id: u64, d: &StoredDataset) -> EntitySummary {
    let desc = &d.description;
    let mut fields = BTreeMap::from([
        ("version".to_string(), desc.version.to_string()),
        ("number_of_instances".to_string(), d.table.row_count.to_string()),
        ("number_of_features".to_string(), desc.features.len().to_string()),
    ]);
    if let Some(t) = &desc.default_target_attribute {
        fields.insert("default_target_attribute".into(), t.clone());
    }
    EntitySummary {
        id,
        name: desc.name.clone(),
        fields,
    }
}

fn procedure_label(p: &EstimationProcedure) -> String {
    match p.resampling {
        Resampling::CrossValidation { folds } => format!("{}x{folds}-fold crossvalidation", p.repeats),
        Resampling::Holdout { percentage } => format!("{}x{percentage}% holdout", p.repeats),
    }
}

impl Store {
    pub fn load(root: &Path) -> Result<Store, MockError> {
        if !root.is_dir() {
            return Err(fixture_err(root, "fixture directory does not exist"));
        }
        let mut store = Store {
            datasets: BTreeMap::new(),
            tasks: BTreeMap::new(),
            flows: BTreeMap::new(),
            flow_index: HashMap::new(),
            runs: BTreeMap::new(),
            suites: BTreeMap::new(),
            evaluations: Vec::new(),
            errors: parse_errors(&root.join(ERRORS_FILE))?,
            next_ids: EntityKind::ALL.into_iter().map(|k| (k, FIRST_UPLOAD_ID)).collect(),
        };
        let id_of = |key: &EntityKey| match key {
            EntityKey::Id(id) => *id,
            EntityKey::Alias(_) => unreachable!("only suites use aliases"),
        };
        let check_id = |dir: &Path, declared: Option<u64>, key: &EntityKey| {
            let id = id_of(key);
            if declared != Some(id) {
                return Err(fixture_err(dir, format!("declared id {declared:?} differs from directory {id}")));
            }
            if id >= FIRST_UPLOAD_ID {
                return Err(fixture_err(dir, format!("fixture ids must stay below {FIRST_UPLOAD_ID}")));
            }
            Ok(id)
        };

        for (key, dir) in entity_dirs(root, EntityKind::Dataset)? {
            let Entity::Dataset(description) = decode_entity(&dir.join(Artifact::Description.file_name()), EntityKind::Dataset)? else {
                unreachable!()
            };
            let id = check_id(&dir, description.id, &key)?;
            let payload = read(&artifact_path(root, EntityKind::Dataset, &key, Artifact::Payload))?;
            let table = check_payload(&description, &payload).map_err(|m| fixture_err(&dir, m))?;
            store.datasets.insert(id, StoredDataset { description, payload, table });
        }
        for (key, dir) in entity_dirs(root, EntityKind::Flow)? {
            let Entity::Flow(flow) = decode_entity(&dir.join(Artifact::Description.file_name()), EntityKind::Flow)? else {
                unreachable!()
            };
            let id = check_id(&dir, flow.id, &key)?;
            if store.flow_index.insert(flow.identity(), id).is_some() {
                return Err(fixture_err(&dir, "two flow fixtures share name and external_version"));
            }
            store.flows.insert(id, flow);
        }
        for (key, dir) in entity_dirs(root, EntityKind::Task)? {
            let Entity::Task(task) = decode_entity(&dir.join(Artifact::Description.file_name()), EntityKind::Task)? else {
                unreachable!()
            };
            let id = check_id(&dir, task.id, &key)?;
            let dataset = store
                .datasets
                .get(&task.dataset_id)
                .ok_or_else(|| fixture_err(&dir, format!("task references missing dataset {}", task.dataset_id)))?;
            let splits = read(&artifact_path(root, EntityKind::Task, &key, Artifact::Splits))?;
            check_task(&task, dataset, &splits).map_err(|m| fixture_err(&dir, m))?;
            store.tasks.insert(id, StoredTask { task, splits });
        }
        for (key, dir) in entity_dirs(root, EntityKind::Run)? {
            let Entity::Run(mut run) = decode_entity(&dir.join(Artifact::Description.file_name()), EntityKind::Run)? else {
                unreachable!()
            };
            let id = check_id(&dir, run.id, &key)?;
            let predictions = read(&artifact_path(root, EntityKind::Run, &key, Artifact::Predictions))?;
            let (recomputed, _) = store.check_run(&run, &predictions).map_err(|m| fixture_err(&dir, m))?;
            run.local_evaluations.insert(PREDICTIVE_ACCURACY.into(), recomputed);
            store.runs.insert(id, StoredRun { run, predictions });
        }
        for (key, dir) in entity_dirs(root, EntityKind::Suite)? {
            let Entity::Suite(suite) = decode_entity(&dir.join(Artifact::Description.file_name()), EntityKind::Suite)? else {
                unreachable!()
            };
            if key != EntityKey::Alias(suite.alias.clone()) {
                return Err(fixture_err(&dir, "suite alias differs from its directory"));
            }
            if let Some(t) = suite.task_ids.iter().find(|t| !store.tasks.contains_key(t)) {
                return Err(fixture_err(&dir, format!("suite references missing task {t}")));
            }
            store.suites.insert(suite.alias.clone(), suite);
        }
        let evals = root.join(EVALUATIONS_FILE);
        if evals.exists() {
            let el = omlclient::protocol::xml::parse(&read(&evals)?).map_err(|e| fixture_err(&evals, e.message))?;
            store.evaluations = codec::evaluations_from_xml(&el).map_err(|e| fixture_err(&evals, e.message))?;
            for r in &store.evaluations {
                if !store.flows.contains_key(&r.flow_id) {
                    return Err(fixture_err(&evals, format!("run {} references missing flow {}", r.run_id, r.flow_id)));
                }
                if !store.tasks.contains_key(&r.task_id) {
                    return Err(fixture_err(&evals, format!("run {} references missing task {}", r.run_id, r.task_id)));
                }
            }
        }
        Ok(store)
    }

    fn fail(&self, code: u32, detail: &str) -> Reply {
        let (status, message) = self.errors.get(&code).cloned().unwrap_or((412, String::new()));
        let message = if detail.is_empty() {
            message
        } else {
            format!("{message}: {detail}")
        };
        Reply::error(status, code, &message)
    }

    pub fn unknown_route(&self, path: &str) -> Reply {
        self.fail(codes::UNKNOWN_ROUTE, path)
    }

    fn next_id(&mut self, kind: EntityKind) -> u64 {
        let slot = self.next_ids.get_mut(&kind).expect("every kind has a counter");
        let id = *slot;
        *slot += 1;
        id
    }

    pub fn get(&self, segments: &[&str]) -> Reply {
        let path = segments.join("/");
        let id = |s: &str| s.parse::<u64>().ok();
        match segments {
            ["evaluation", "list", rest @ ..] => self.evaluations(rest),
            [kind, "list", rest @ ..] if *kind != "study" => match EntityKind::parse(kind) {
                Some(k) => self.list(k, rest),
                None => self.unknown_route(&path),
            },
            ["data", "download", i] => match id(i).and_then(|i| self.datasets.get(&i)) {
                Some(d) => Reply::arff(d.payload.clone()),
                None => self.fail(codes::UNKNOWN_DATASET, i),
            },
            ["data", "features", i] => match id(i).and_then(|i| self.datasets.get(&i)) {
                Some(d) => Reply::xml(codec::features_to_xml(&d.description.features).to_xml()),
                None => self.fail(codes::UNKNOWN_DATASET, i),
            },
            ["data", i] => match id(i).and_then(|i| self.datasets.get(&i)) {
                Some(d) => Reply::xml(Entity::Dataset(d.description.clone()).to_xml()),
                None => self.fail(codes::UNKNOWN_DATASET, i),
            },
            ["task", "splits", i] => match id(i).and_then(|i| self.tasks.get(&i)) {
                Some(t) => Reply::arff(t.splits.clone()),
                None => self.fail(codes::UNKNOWN_TASK, i),
            },
            ["task", i] => match id(i).and_then(|i| self.tasks.get(&i)) {
                Some(t) => Reply::xml(Entity::Task(t.task.clone()).to_xml()),
                None => self.fail(codes::UNKNOWN_TASK, i),
            },
            ["flow", i] => match id(i).and_then(|i| self.flows.get(&i)) {
                Some(f) => Reply::xml(Entity::Flow(f.clone()).to_xml()),
                None => self.fail(codes::UNKNOWN_FLOW, i),
            },
            ["run", "predictions", i] => match id(i).and_then(|i| self.runs.get(&i)) {
                Some(r) => Reply::arff(r.predictions.clone()),
                None => self.fail(codes::UNKNOWN_RUN, i),
            },
            ["run", i] => match id(i).and_then(|i| self.runs.get(&i)) {
                Some(r) => Reply::xml(Entity::Run(r.run.clone()).to_xml()),
                None => self.fail(codes::UNKNOWN_RUN, i),
            },
            ["study", alias] => match self.suites.get(&decode_segment(alias)) {
                Some(s) => Reply::xml(Entity::Suite(s.clone()).to_xml()),
                None => self.fail(codes::UNKNOWN_STUDY, &decode_segment(alias)),
            },
            _ => self.unknown_route(&path),
        }
    }

    /// Alternating `name/value` segments.
    fn pairs(rest: &[&str]) -> Option<Vec<(String, String)>> {
        if !rest.len().is_multiple_of(2) {
            return None;
        }
        Some(
            rest.chunks(2)
                .map(|c| (decode_segment(c[0]), decode_segment(c[1])))
                .collect(),
        )
    }

    fn summaries(&self, kind: EntityKind) -> Vec<EntitySummary> {
        match kind {
            EntityKind::Dataset => self.datasets.iter().map(|(id, d)| dataset_summary(*id, d)).collect(),
            EntityKind::Task => self
                .tasks
                .iter()
                .map(|(id, t)| {
                    let task = &t.task;
                    let name = self.datasets.get(&task.dataset_id).map_or(String::new(), |d| d.description.name.clone());
                    EntitySummary {
                        id: *id,
                        name,
                        fields: BTreeMap::from([
                            ("task_type".to_string(), task.task_type.as_str().to_string()),
                            ("dataset_id".to_string(), task.dataset_id.to_string()),
                            ("target_name".to_string(), task.target_name.clone()),
                            ("estimation_procedure".to_string(), procedure_label(&task.estimation_procedure)),
                        ]),
                    }
                })
                .collect(),
            EntityKind::Flow => self
                .flows
                .iter()
                .map(|(id, f)| EntitySummary {
                    id: *id,
                    name: f.name.clone(),
                    fields: BTreeMap::from([
                        ("external_version".to_string(), f.external_version.clone()),
                        ("full_name".to_string(), canonical_flow_name(f)),
                    ]),
                })
                .collect(),
            EntityKind::Run => self
                .runs
                .iter()
                .map(|(id, r)| {
                    let mut fields = BTreeMap::from([
                        ("task_id".to_string(), r.run.task_id.to_string()),
                        ("seed".to_string(), r.run.seed.to_string()),
                    ]);
                    if let Some(f) = r.run.flow_id {
                        fields.insert("flow_id".into(), f.to_string());
                    }
                    EntitySummary {
                        id: *id,
                        name: format!("run {id}"),
                        fields,
                    }
                })
                .collect(),
            EntityKind::Suite => Vec::new(),
        }
    }

    fn list(&self, kind: EntityKind, rest: &[&str]) -> Reply {
        let bad = |m: &str| Reply::error(400, codes::UNKNOWN_ROUTE, m);
        let Some(pairs) = Self::pairs(rest) else {
            return bad("list filters must come in name/value pairs");
        };
        let (mut offset, mut limit) = (0usize, MAX_LIST_LIMIT);
        let mut filters = Vec::new();
        for (k, v) in pairs {
            match k.as_str() {
                "offset" => match v.parse() {
                    Ok(n) => offset = n,
                    Err(_) => return bad("offset is not a non-negative integer"),
                },
                "limit" => match v.parse() {
                    Ok(n) if (1..=MAX_LIST_LIMIT).contains(&n) => limit = n,
                    _ => return bad("limit must lie in [1, 10000]"),
                },
                _ => filters.push((k, v)),
            }
        }
        let matches = |s: &EntitySummary| {
            filters.iter().all(|(k, v)| match k.as_str() {
                "name" => &s.name == v,
                "id" => &s.id.to_string() == v,
                _ => s.fields.get(k) == Some(v),
            })
        };
        let items: Vec<EntitySummary> = self
            .summaries(kind)
            .into_iter()
            .filter(matches)
            .skip(offset)
            .take(limit)
            .collect();
        Reply::xml(codec::summaries_to_xml(kind, &items).to_xml())
    }

    fn evaluations(&self, rest: &[&str]) -> Reply {
        let bad = |m: &str| Reply::error(400, codes::UNKNOWN_ROUTE, m);
        let Some(pairs) = Self::pairs(rest) else {
            return bad("evaluation filters must come in name/value pairs");
        };
        let ids = |v: &str| v.split(',').map(|s| s.parse::<u64>()).collect::<Result<BTreeSet<_>, _>>();
        let (mut function, mut flows, mut tasks) = (None, None, None);
        for (k, v) in pairs {
            match k.as_str() {
                "function" => function = Some(v),
                "flow" => match ids(&v) {
                    Ok(s) => flows = Some(s),
                    Err(_) => return bad("flow filter must be a comma-separated id list"),
                },
                "task" => match ids(&v) {
                    Ok(s) => tasks = Some(s),
                    Err(_) => return bad("task filter must be a comma-separated id list"),
                },
                other => return bad(&format!("unknown evaluation filter {other}")),
            }
        }
        let Some(function) = function else {
            return bad("function is required");
        };
        let known = function == PREDICTIVE_ACCURACY || self.evaluations.iter().any(|r| r.function == function);
        if !known {
            return self.fail(codes::UNKNOWN_MEASURE, &function);
        }
        let mut records: Vec<EvaluationRecord> = self
            .evaluations
            .iter()
            .filter(|r| r.function == function)
            .filter(|r| flows.as_ref().is_none_or(|f| f.contains(&r.flow_id)))
            .filter(|r| tasks.as_ref().is_none_or(|t| t.contains(&r.task_id)))
            .cloned()
            .collect();
        records.sort_by_key(|r| r.run_id);
        Reply::xml(codec::evaluations_to_xml(&records).to_xml())
    }

    pub fn post(&mut self, segments: &[&str], api_key: Option<&str>, content_type: &str, body: &[u8]) -> Reply {
        let kind = match segments {
            [k] => match EntityKind::parse(k) {
                Some(k) if k != EntityKind::Suite => k,
                _ => return self.unknown_route(&segments.join("/")),
            },
            _ => return self.unknown_route(&segments.join("/")),
        };
        if api_key.is_none_or(str::is_empty) {
            return self.fail(codes::AUTHENTICATION_FAILED, "api_key required");
        }
        let parts = match multipart::decode(content_type, body) {
            Ok(p) => p,
            Err(e) => return self.fail(codes::UPLOAD_VALIDATION, &e.message),
        };
        let part = |name: &str| parts.iter().find(|p| p.name == name).map(|p| p.data.as_slice());
        let Some(description) = part("description") else {
            return self.fail(codes::UPLOAD_VALIDATION, "missing description part");
        };
        let entity = match Entity::decode(kind, description) {
            Ok(e) => e,
            Err(e) => return self.fail(codes::UPLOAD_VALIDATION, &e.message),
        };
        let result = match entity {
            Entity::Dataset(d) => match part("dataset") {
                Some(payload) => self.add_dataset(d, payload),
                None => Err("missing dataset part".into()),
            },
            Entity::Flow(f) => Ok(self.add_flow(f)),
            Entity::Task(t) => self.add_task(t),
            Entity::Run(r) => match part("predictions") {
                Some(p) => self.add_run(r, p),
                None => Err("missing predictions part".into()),
            },
            Entity::Suite(_) => unreachable!("suites are not published"),
        };
        match result {
            Ok(id) => Reply::xml(codec::upload_response(id)),
            Err(message) => self.fail(codes::UPLOAD_VALIDATION, &message),
        }
    }

    fn add_dataset(&mut self, mut description: DatasetDescription, payload: &[u8]) -> Result<u64, String> {
        let table = check_payload(&description, payload)?;
        let id = self.next_id(EntityKind::Dataset);
        description.id = Some(id);
        self.datasets.insert(
            id,
            StoredDataset {
                description,
                payload: payload.to_vec(),
                table,
            },
        );
        Ok(id)
    }

    fn add_flow(&mut self, mut flow: Flow) -> u64 {
        if let Some(id) = self.flow_index.get(&flow.identity()) {
            return *id;
        }
        let id = self.next_id(EntityKind::Flow);
        flow.id = Some(id);
        self.flow_index.insert(flow.identity(), id);
        self.flows.insert(id, flow);
        id
    }

    fn add_task(&mut self, mut task: Task) -> Result<u64, String> {
        let dataset = self
            .datasets
            .get(&task.dataset_id)
            .ok_or_else(|| format!("unknown dataset {}", task.dataset_id))?;
        let problems = task.validate_against(&dataset.description);
        if !problems.is_empty() {
            return Err(problems.join("; "));
        }
        let n = dataset.table.row_count;
        if n < task.estimation_procedure.folds() as usize || n < 2 {
            return Err(format!("dataset has {n} rows, too few for the estimation procedure"));
        }
        let id = self.next_id(EntityKind::Task);
        task.id = Some(id);
        task.estimation_procedure.splits_ref = routes::task_splits(id);
        let doc = make_splits(&task.estimation_procedure, n, id, &format!("task_{id}_splits"));
        self.tasks.insert(
            id,
            StoredTask {
                task,
                splits: arff::serialize(&doc).into_bytes(),
            },
        );
        Ok(id)
    }

    /// Validates a run against its task, flow, dataset and split table, and
    /// returns the accuracy recomputed from ground truth with the rows.
    fn check_run(&self, run: &Run, predictions: &[u8]) -> Result<(f64, Vec<PredictionRow>), String> {
        let stored = self.tasks.get(&run.task_id).ok_or_else(|| format!("unknown task {}", run.task_id))?;
        let task = &stored.task;
        let flow_id = run.flow_id.ok_or("run has no flow_id")?;
        let flow = self.flows.get(&flow_id).ok_or_else(|| format!("unknown flow {flow_id}"))?;
        let problems = run.validate_against_flow(flow);
        if !problems.is_empty() {
            return Err(problems.join("; "));
        }
        let text = std::str::from_utf8(predictions).map_err(|_| "predictions are not UTF-8".to_string())?;
        let doc = arff::parse(text).map_err(|e| e.to_string())?;
        let (labels, rows) = codec::predictions_from_arff(&doc).map_err(|e| e.message)?;
        if labels != task.class_labels {
            return Err("prediction labels differ from the task's class labels".into());
        }
        let mut full = run.clone();
        full.predictions = rows;
        let problems = full.validate();
        if !problems.is_empty() {
            return Err(problems.join("; "));
        }
        let dataset = &self.datasets[&task.dataset_id];
        let splits_doc = arff::parse(std::str::from_utf8(&stored.splits).expect("validated at insert")).expect("validated at insert");
        let splits = iter_splits_for(task, &splits_doc, dataset.table.row_count).map_err(|e| e.to_string())?;
        let mut expected: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
        for s in &splits {
            expected.insert((s.repeat, s.fold), s.test.iter().map(|r| *r as u64).collect());
        }
        let mut got: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
        for p in &full.predictions {
            got.entry((p.repeat, p.fold)).or_default().push(p.row_id);
        }
        got.values_mut().for_each(|v| v.sort_unstable());
        if got != expected {
            return Err("predictions do not cover exactly the test rows of every fold".into());
        }
        let target = dataset.table.column(&task.target_name).ok_or("target column missing")?;
        let mut correct = 0u64;
        for p in &full.predictions {
            let truth = target.label(p.row_id as usize).map(|l| PredictionValue::Label(l.to_string()));
            if truth.as_ref() != Some(&p.truth) {
                return Err(format!("correct value of row {} differs from the dataset", p.row_id));
            }
            if p.prediction == p.truth {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / full.predictions.len() as f64;
        if let Some(reported) = run.local_evaluations.get(PREDICTIVE_ACCURACY) {
            if (reported - accuracy).abs() > ACCURACY_TOLERANCE {
                return Err(format!("reported {PREDICTIVE_ACCURACY} {reported} differs from recomputed {accuracy}"));
            }
        }
        Ok((accuracy, full.predictions))
    }

    fn add_run(&mut self, mut run: Run, predictions: &[u8]) -> Result<u64, String> {
        let (accuracy, _) = self.check_run(&run, predictions)?;
        let id = self.next_id(EntityKind::Run);
        run.id = Some(id);
        run.predictions.clear();
        run.local_evaluations = BTreeMap::from([(PREDICTIVE_ACCURACY.to_string(), accuracy)]);
        let flow_id = run.flow_id.expect("checked");
        let prefix = format!("{}({flow_id})_", self.flows[&flow_id].name);
        self.evaluations.push(EvaluationRecord {
            run_id: id,
            task_id: run.task_id,
            flow_id,
            function: PREDICTIVE_ACCURACY.into(),
            value: accuracy,
            parameters: run.setup.iter().map(|s| (format!("{prefix}{}", s.path), s.value.clone())).collect(),
        });
        self.runs.insert(
            id,
            StoredRun {
                run,
                predictions: predictions.to_vec(),
            },
        );
        Ok(id)
    }
}
