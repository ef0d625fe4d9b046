//! Generator for the bundled fixture corpus.
//!
//! All values are synthetic. Every file is a pure function of the code
//! below, so `cargo run --example gen_fixtures` reproduces the committed
//! directory byte for byte.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use omlclient::arff::{self, ArffDocument, Attribute, Row, Value};
use omlclient::cache::{cache_path, md5_hex, Artifact};
use omlclient::entities::*;
use omlclient::protocol::routes::{self, EntityKey};
use omlclient::protocol::{codec, codes, Entity};
use omlclient::runner::{make_splits, split_attributes};

/// Flow whose evaluations carry the C/gamma landscape.
pub const SVC_FLOW: u64 = 8353;
pub const TREE_FLOW: u64 = 7707;
pub const SVC_PREFIX: &str = "sklearn.svm.classes.SVC(16)_";
pub const TREE_PREFIX: &str = "sklearn.tree.tree.DecisionTreeClassifier(7)_";
pub const SVC_RECORDS: usize = 50;
pub const TREE_RECORDS: usize = 5;

pub const LETTER_TASK: u64 = 6;
pub const CREDIT_TASK: u64 = 31;
pub const IRIS_TASK: u64 = 59;
/// 1-NN ties that only the seed can break.
pub const TIES_TASK: u64 = 200;
/// Small task for grid-search traces.
pub const GRID_TASK: u64 = 201;
/// 4 rows, test folds {0, 2} and {1, 3}.
pub const TINY_TASK: u64 = 202;
pub const HOLDOUT_TASK: u64 = 204;

pub const MINI_SUITE: &str = "local-mini";
pub const CC18_SUITE: &str = "OpenML-CC18";

const ERRORS: &str = "code\thttp_status\tmessage
0\t404\tUnknown route
102\t412\tUpload validation failed
103\t412\tAuthentication failed
111\t412\tUnknown dataset
151\t412\tUnknown task
181\t412\tUnknown flow
221\t412\tUnknown run
541\t412\tUnknown evaluation measure
601\t412\tUnknown study
";

/// Every bundled file, keyed by path relative to the fixture root.
pub fn bundled_files() -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = Files::default();
    files.put(PathBuf::from(crate::ERRORS_FILE), ERRORS.as_bytes().to_vec());
    datasets_and_tasks(&mut files);
    flows(&mut files);
    suites(&mut files);
    evaluations(&mut files);
    // keep the table in sync with the codes the client knows
    debug_assert!(ERRORS.contains(&format!("\n{}\t", codes::UNKNOWN_STUDY)));
    files.0
}

/// Writes [`bundled_files`] under `root`, returning the relative paths.
pub fn write_bundled(root: &Path) -> io::Result<Vec<PathBuf>> {
    let files = bundled_files();
    for (rel, bytes) in &files {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)?;
    }
    Ok(files.into_keys().collect())
}

#[derive(Default)]
struct Files(BTreeMap<PathBuf, Vec<u8>>);

impl Files {
    fn put(&mut self, path: PathBuf, bytes: Vec<u8>) {
        assert!(self.0.insert(path, bytes).is_none(), "fixture written twice");
    }

    fn entity(&mut self, entity: &Entity, key: EntityKey) {
        self.put(
            cache_path("", entity.kind(), &key, Artifact::Description),
            entity.to_xml().into_bytes(),
        );
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6f6d_6c00 + tag)
}

fn num(v: f64) -> Value {
    Value::Number(v)
}

fn text(s: &str) -> Value {
    Value::text(s)
}

fn letter() -> ArffDocument {
    const NAMES: [&str; 16] = [
        "x-box", "y-box", "width", "high", "onpix", "x-bar", "y-bar", "x2bar", "y2bar", "xybar", "x2ybr", "xy2br", "x-ege",
        "xegvy", "y-ege", "yegvx",
    ];
    let labels: Vec<String> = (b'A'..=b'Z').map(|c| (c as char).to_string()).collect();
    let mut attrs: Vec<Attribute> = NAMES.iter().map(|n| Attribute::numeric(*n)).collect();
    attrs.push(Attribute::nominal("class", labels.iter().cloned()));
    let mut doc = ArffDocument::new("letter", attrs);
    let mut r = rng(6);
    let mut classes: Vec<usize> = (0..500).map(|i| i % 26).collect();
    for i in (1..classes.len()).rev() {
        classes.swap(i, r.gen_range(0..=i));
    }
    for c in classes {
        let mut row: Vec<Value> = (0..16)
            .map(|f| {
                let centre = ((c * 7 + f * 5) % 16) as i64;
                num((centre + r.gen_range(-2..=2)).clamp(0, 15) as f64)
            })
            .collect();
        row.push(text(&labels[c]));
        doc.rows.push(Row::Dense(row));
    }
    doc
}

fn credit() -> ArffDocument {
    let checking = ["<0", "0<=X<200", ">=200", "no checking"];
    let purpose = ["new car", "used car", "furniture/equipment", "radio/tv", "education", "business"];
    let mut doc = ArffDocument::new(
        "credit-mini",
        vec![
            Attribute::nominal("checking_status", checking),
            Attribute::numeric("duration"),
            Attribute::numeric("credit_amount"),
            Attribute::nominal("purpose", purpose),
            Attribute::numeric("age"),
            Attribute::nominal("class", ["good", "bad"]),
        ],
    );
    let mut r = rng(31);
    for _ in 0..150 {
        let chk = r.gen_range(0..checking.len());
        let duration = r.gen_range(4..=60) as f64;
        let amount = (r.gen_range(250..=15000) / 10 * 10) as f64;
        let age = r.gen_range(19..=75) as f64;
        let risk = if chk == 0 { 0.35 } else { 0.0 } + duration / 200.0 + amount / 60000.0 - if chk == 3 { 0.25 } else { 0.0 };
        let bad = risk + r.gen_range(-0.2..0.2) > 0.3;
        doc.rows.push(Row::Dense(vec![
            if r.gen_bool(0.08) { Value::Missing } else { text(checking[chk]) },
            if r.gen_bool(0.05) { Value::Missing } else { num(duration) },
            num(amount),
            text(purpose[r.gen_range(0..purpose.len())]),
            num(age),
            text(if bad { "bad" } else { "good" }),
        ]));
    }
    doc
}

fn iris() -> ArffDocument {
    let species = ["Iris-setosa", "Iris-versicolor", "Iris-virginica"];
    let means = [[5.0, 3.4, 1.5, 0.2], [5.9, 2.8, 4.3, 1.3], [6.6, 3.0, 5.6, 2.0]];
    let mut attrs: Vec<Attribute> = ["sepallength", "sepalwidth", "petallength", "petalwidth"]
        .iter()
        .map(|n| Attribute::numeric(*n))
        .collect();
    attrs.push(Attribute::nominal("class", species));
    let mut doc = ArffDocument::new("iris", attrs);
    let mut r = rng(61);
    for (s, m) in means.iter().enumerate() {
        for _ in 0..50 {
            let mut row: Vec<Value> = m
                .iter()
                .map(|mu| {
                    let v: f64 = mu + r.gen_range(-0.4..0.4);
                    num(((v.max(0.1)) * 10.0).round() / 10.0)
                })
                .collect();
            row.push(text(species[s]));
            doc.rows.push(Row::Dense(row));
        }
    }
    doc
}

/// Rows 2..=9 sit at x=1, halfway between row 0 (x=0, a) and row 1 (x=2, b).
fn nn_ties() -> ArffDocument {
    let mut doc = ArffDocument::new("nn-ties", vec![Attribute::numeric("x"), Attribute::nominal("class", ["a", "b"])]);
    doc.rows.push(Row::Dense(vec![num(0.0), text("a")]));
    doc.rows.push(Row::Dense(vec![num(2.0), text("b")]));
    for i in 0..8 {
        doc.rows.push(Row::Dense(vec![num(1.0), text(if i % 2 == 0 { "a" } else { "b" })]));
    }
    doc
}

fn grid_toy() -> ArffDocument {
    let mut doc = ArffDocument::new(
        "grid-toy",
        vec![Attribute::numeric("x1"), Attribute::numeric("x2"), Attribute::nominal("class", ["neg", "pos"])],
    );
    let mut r = rng(101);
    for _ in 0..90 {
        let x1 = r.gen_range(0..10) as f64;
        let x2 = r.gen_range(0..10) as f64;
        let mut pos = x1 >= 5.0 && x2 >= 3.0;
        if r.gen_bool(0.05) {
            pos = !pos;
        }
        doc.rows.push(Row::Dense(vec![num(x1), num(x2), text(if pos { "pos" } else { "neg" })]));
    }
    doc
}

fn tiny() -> ArffDocument {
    let mut doc = ArffDocument::new("tiny", vec![Attribute::numeric("x"), Attribute::nominal("class", ["a", "b"])]);
    for (x, c) in [(0.0, "a"), (1.0, "a"), (2.0, "b"), (3.0, "b")] {
        doc.rows.push(Row::Dense(vec![num(x), text(c)]));
    }
    doc
}

fn balance() -> ArffDocument {
    let mut doc = ArffDocument::new(
        "balance-mini",
        vec![
            Attribute::numeric("left-weight"),
            Attribute::numeric("left-distance"),
            Attribute::numeric("right-weight"),
            Attribute::numeric("right-distance"),
            Attribute::nominal("class", ["L", "B", "R"]),
        ],
    );
    let mut r = rng(103);
    for _ in 0..120 {
        let v: Vec<i32> = (0..4).map(|_| r.gen_range(1..=5)).collect();
        let (left, right) = (v[0] * v[1], v[2] * v[3]);
        let class = match left.cmp(&right) {
            std::cmp::Ordering::Greater => "L",
            std::cmp::Ordering::Equal => "B",
            std::cmp::Ordering::Less => "R",
        };
        let mut row: Vec<Value> = v.iter().map(|x| num(*x as f64)).collect();
        row.push(text(class));
        doc.rows.push(Row::Dense(row));
    }
    doc
}

/// Split table with one repeat whose test folds are given explicitly.
fn explicit_splits(relation: &str, n: usize, test_folds: &[&[usize]]) -> ArffDocument {
    let mut doc = ArffDocument::new(relation, split_attributes());
    for (fold, test) in test_folds.iter().enumerate() {
        for r in 0..n {
            doc.rows.push(Row::Dense(vec![
                text(if test.contains(&r) { "TEST" } else { "TRAIN" }),
                num(r as f64),
                num(0.0),
                num(fold as f64),
            ]));
        }
    }
    doc
}

fn describe(id: u64, doc: &ArffDocument, payload: &[u8]) -> DatasetDescription {
    let features = arff::feature_summary(doc);
    let target = features.last().expect("fixture datasets have a target");
    let qualities = BTreeMap::from([
        ("NumberOfInstances".to_string(), doc.rows.len() as f64),
        ("NumberOfFeatures".to_string(), features.len() as f64),
        ("NumberOfClasses".to_string(), target.nominal_values.len() as f64),
        (
            "NumberOfMissingValues".to_string(),
            features.iter().map(|f| f.missing_count).sum::<u64>() as f64,
        ),
    ]);
    DatasetDescription {
        id: Some(id),
        name: doc.relation.clone(),
        version: 1,
        default_target_attribute: Some(target.name.clone()),
        file_checksum: md5_hex(payload),
        features,
        qualities,
    }
}

fn datasets_and_tasks(files: &mut Files) {
    let cv = EstimationProcedure::cross_validation;
    let holdout = EstimationProcedure {
        resampling: Resampling::Holdout { percentage: 33.0 },
        repeats: 2,
        splits_ref: String::new(),
    };
    // (dataset id, payload, task id, procedure, explicit test folds)
    type Plan<'a> = (u64, ArffDocument, u64, EstimationProcedure, Option<Vec<&'a [usize]>>);
    let plan: Vec<Plan> = vec![
        (6, letter(), LETTER_TASK, cv(1, 10), None),
        (31, credit(), CREDIT_TASK, cv(1, 10), None),
        (61, iris(), IRIS_TASK, cv(1, 10), None),
        (100, nn_ties(), TIES_TASK, cv(1, 2), Some(vec![&[2, 3, 4, 5, 6, 7, 8, 9], &[0, 1]])),
        (101, grid_toy(), GRID_TASK, cv(2, 3), None),
        (102, tiny(), TINY_TASK, cv(1, 2), Some(vec![&[0, 2], &[1, 3]])),
        (103, balance(), HOLDOUT_TASK, holdout, None),
    ];
    for (dataset_id, doc, task_id, mut procedure, explicit) in plan {
        let payload = arff::serialize(&doc).into_bytes();
        let description = describe(dataset_id, &doc, &payload);
        let target = description.features.last().unwrap().clone();
        files.entity(&Entity::Dataset(description), dataset_id.into());
        files.put(
            cache_path("", EntityKind::Dataset, &dataset_id.into(), Artifact::Payload),
            payload,
        );

        procedure.splits_ref = routes::task_splits(task_id);
        let relation = format!("task_{task_id}_splits");
        let splits = match explicit {
            Some(folds) => explicit_splits(&relation, doc.rows.len(), &folds),
            None => make_splits(&procedure, doc.rows.len(), task_id, &relation),
        };
        let task = Task {
            id: Some(task_id),
            task_type: TaskType::SupervisedClassification,
            dataset_id,
            target_name: target.name,
            estimation_procedure: procedure,
            class_labels: target.nominal_values,
        };
        files.entity(&Entity::Task(task), task_id.into());
        files.put(
            cache_path("", EntityKind::Task, &task_id.into(), Artifact::Splits),
            arff::serialize(&splits).into_bytes(),
        );
    }
}

fn param(name: &str, default: &str, kind: &str) -> FlowParameter {
    FlowParameter {
        name: name.into(),
        default_value: default.into(),
        kind: kind.into(),
    }
}

fn flows(files: &mut Files) {
    let svc = Flow {
        id: Some(SVC_FLOW),
        name: "sklearn.svm.classes.SVC".into(),
        external_version: "sklearn==0.18.1".into(),
        parameters: vec![
            param("C", "1.0", "float"),
            param("gamma", "auto", "float"),
            param("kernel", "rbf", "string"),
        ],
        components: Vec::new(),
        dependencies: "sklearn>=0.18".into(),
    };
    let tree = Flow {
        id: Some(TREE_FLOW),
        name: "sklearn.tree.tree.DecisionTreeClassifier".into(),
        external_version: "sklearn==0.18.1".into(),
        parameters: vec![param("max_depth", "None", "int"), param("min_samples_leaf", "1", "int")],
        components: Vec::new(),
        dependencies: "sklearn>=0.18".into(),
    };
    files.entity(&Entity::Flow(svc), SVC_FLOW.into());
    files.entity(&Entity::Flow(tree), TREE_FLOW.into());
}

fn suites(files: &mut Files) {
    let mini = Suite {
        alias: MINI_SUITE.into(),
        name: "Local mini benchmark".into(),
        task_ids: vec![LETTER_TASK, CREDIT_TASK, IRIS_TASK],
    };
    let cc18 = Suite {
        alias: CC18_SUITE.into(),
        name: "Curated classification suite (fixture subset)".into(),
        task_ids: vec![LETTER_TASK, CREDIT_TASK],
    };
    for s in [mini, cc18] {
        let key = EntityKey::Alias(s.alias.clone());
        files.entity(&Entity::Suite(s), key);
    }
}

/// Synthetic accuracy surface over log2 C and log2 gamma, peaking near
/// C = 2^5, gamma = 2^-7.
fn svc_accuracy(log2_c: f64, log2_gamma: f64) -> f64 {
    let d = ((log2_c - 5.0) / 8.0).powi(2) + ((log2_gamma + 7.0) / 6.0).powi(2);
    ((0.04 + 0.93 * (-d).exp()) * 1e4).round() / 1e4
}

fn evaluations(files: &mut Files) {
    let mut r = rng(8353);
    let mut records = Vec::new();
    for run_id in 1..=SVC_RECORDS as u64 {
        // log-uniform draws on a 1/4-octave lattice keep the strings short
        let log2_c = (r.gen_range(-5.0f64..15.0) * 4.0).round() / 4.0;
        let log2_gamma = (r.gen_range(-15.0f64..3.0) * 4.0).round() / 4.0;
        records.push(EvaluationRecord {
            run_id,
            task_id: LETTER_TASK,
            flow_id: SVC_FLOW,
            function: "predictive_accuracy".into(),
            value: svc_accuracy(log2_c, log2_gamma),
            parameters: BTreeMap::from([
                (format!("{SVC_PREFIX}C"), 2f64.powf(log2_c).to_string()),
                (format!("{SVC_PREFIX}gamma"), 2f64.powf(log2_gamma).to_string()),
                (format!("{SVC_PREFIX}kernel"), "rbf".to_string()),
            ]),
        });
    }
    let tree_points = [(1, 0.31), (2, 0.52), (4, 0.74), (8, 0.86), (16, 0.84)];
    for (i, (depth, value)) in tree_points.into_iter().enumerate() {
        records.push(EvaluationRecord {
            run_id: 1000 + i as u64,
            task_id: LETTER_TASK,
            flow_id: TREE_FLOW,
            function: "predictive_accuracy".into(),
            value,
            parameters: BTreeMap::from([
                (format!("{TREE_PREFIX}max_depth"), depth.to_string()),
                (format!("{TREE_PREFIX}min_samples_leaf"), "1".to_string()),
            ]),
        });
    }
    files.put(
        PathBuf::from(crate::EVALUATIONS_FILE),
        codec::evaluations_to_xml(&records).to_xml().into_bytes(),
    );
}
