use std::collections::BTreeMap;
use std::time::Duration;

use omlclient::arff::{self, feature_summary, ArffDocument, Attribute, Row, Value};
use omlclient::cache::{md5_hex, CacheConfig, CachedClient};
use omlclient::entities::*;
use omlclient::extension::ModelSpec;
use omlclient::protocol::{codes, Client, ProtocolError, ServerConfig};
use omlclient::runner::{self, RunOptions};
use omlclient_mockserver::fixtures::{self, LETTER_TASK, SVC_FLOW, TINY_TASK};
use omlclient_mockserver::{bundled_fixtures, MockServer, FIRST_UPLOAD_ID};
use proptest::prelude::*;

fn server() -> MockServer {
    MockServer::bundled().unwrap()
}

fn config(server: &MockServer, key: Option<&str>) -> ServerConfig {
    ServerConfig {
        api_key: key.map(str::to_string),
        retries: 0,
        backoff: Duration::from_millis(1),
        ..ServerConfig::new(server.base_url())
    }
}

fn client(server: &MockServer) -> Client {
    Client::new(config(server, Some("secret"))).unwrap()
}

fn api_code<T: std::fmt::Debug>(r: Result<T, ProtocolError>) -> (u32, u16) {
    match r {
        Err(ProtocolError::Api(e)) => (e.code, e.http_status),
        other => panic!("expected an API error, got {other:?}"),
    }
}

#[test]
fn committed_fixtures_are_up_to_date() {
    let root = bundled_fixtures();
    for (rel, bytes) in fixtures::bundled_files() {
        let on_disk = std::fs::read(root.join(&rel)).unwrap_or_default();
        assert!(on_disk == bytes, "{} is stale; run the gen_fixtures example", rel.display());
    }
}

#[test]
fn get_serves_fixtures_and_counts() {
    let s = server();
    let c = client(&s);
    let bytes = c.get_bytes("task/6").unwrap();
    assert_eq!(bytes, std::fs::read(bundled_fixtures().join("task/6/description.xml")).unwrap());
    assert_eq!(s.request_count("task/6"), 1);
    let task = c.get_task(LETTER_TASK).unwrap();
    assert_eq!(task.id, Some(6));
    let dataset = c.get_dataset(task.dataset_id).unwrap();
    assert_eq!(dataset.name, "letter");
    assert_eq!(s.request_count("task/6"), 2);
    assert_eq!(s.total_requests(), 3);
    let suite = c.get_suite("OpenML-CC18").unwrap();
    assert!(!suite.task_ids.is_empty());
}

#[test]
fn error_table() {
    let s = server();
    let c = client(&s);
    assert_eq!(api_code(c.get_dataset(999_999)), (codes::UNKNOWN_DATASET, 412));
    assert_eq!(api_code(c.get_task(999_999)), (codes::UNKNOWN_TASK, 412));
    assert_eq!(api_code(c.get_flow(999_999)), (codes::UNKNOWN_FLOW, 412));
    assert_eq!(api_code(c.get_run(999_999)), (codes::UNKNOWN_RUN, 412));
    assert_eq!(api_code(c.get_suite("nope")), (codes::UNKNOWN_STUDY, 412));
    assert_eq!(api_code(c.get_bytes("no/such/route")), (codes::UNKNOWN_ROUTE, 404));
    assert_eq!(
        api_code(c.list_evaluations_setups("area_under_roc_curve", &[SVC_FLOW], &[])),
        (codes::UNKNOWN_MEASURE, 412)
    );
}

#[test]
fn listing_pages_filters_and_orders() {
    let s = server();
    let c = client(&s);
    let none = BTreeMap::new();
    let page = c.list_entities(EntityKind::Dataset, &none, 0, 5).unwrap();
    let ids: Vec<u64> = page.iter().map(|d| d.id).collect();
    assert_eq!(ids, vec![6, 31, 61, 100, 101]);
    let all = c.list_entities(EntityKind::Dataset, &none, 0, 100).unwrap();
    assert_eq!(all.len(), 7);
    assert!(c.list_entities(EntityKind::Dataset, &none, 7, 5).unwrap().is_empty());
    let letter = BTreeMap::from([("name".to_string(), "letter".to_string())]);
    let hits = c.list_entities(EntityKind::Dataset, &letter, 0, 100).unwrap();
    assert_eq!(hits.iter().map(|d| d.id).collect::<Vec<_>>(), vec![6]);
    let both = BTreeMap::from([
        ("name".to_string(), "letter".to_string()),
        ("version".to_string(), "2".to_string()),
    ]);
    assert!(c.list_entities(EntityKind::Dataset, &both, 0, 100).unwrap().is_empty());
    let tasks_on_6 = BTreeMap::from([("dataset_id".to_string(), "6".to_string())]);
    let tasks = c.list_entities(EntityKind::Task, &tasks_on_6, 0, 10).unwrap();
    assert_eq!(tasks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![6]);
}

#[test]
fn evaluations_filter_by_flow_and_task() {
    let s = server();
    let c = client(&s);
    let svc = c.list_evaluations_setups("predictive_accuracy", &[SVC_FLOW], &[LETTER_TASK]).unwrap();
    assert_eq!(svc.len(), fixtures::SVC_RECORDS);
    assert!(svc.windows(2).all(|w| w[0].run_id < w[1].run_id));
    assert!(svc[0].parameters.contains_key("sklearn.svm.classes.SVC(16)_C"));
    let both = c
        .list_evaluations_setups("predictive_accuracy", &[SVC_FLOW, fixtures::TREE_FLOW], &[])
        .unwrap();
    assert_eq!(both.len(), fixtures::SVC_RECORDS + fixtures::TREE_RECORDS);
    assert!(c.list_evaluations_setups("predictive_accuracy", &[], &[TINY_TASK]).unwrap().is_empty());
}

fn flow(name: &str) -> Flow {
    Flow {
        parameters: vec![FlowParameter {
            name: "alpha".into(),
            default_value: "0.5".into(),
            kind: "float".into(),
        }],
        ..Flow::leaf(name, "v1")
    }
}

#[test]
fn uploads_need_an_api_key_and_change_nothing_without_one() {
    let s = server();
    let anonymous = Client::new(config(&s, None)).unwrap();
    assert_eq!(api_code(anonymous.publish_flow(&flow("x.y"))), (codes::AUTHENTICATION_FAILED, 412));
    let c = client(&s);
    let flows = c.list_entities(EntityKind::Flow, &BTreeMap::new(), 0, 100).unwrap();
    assert_eq!(flows.len(), 2);
    // the first accepted upload still gets the first id
    assert_eq!(c.publish_flow(&flow("x.y")).unwrap(), FIRST_UPLOAD_ID);
}

#[test]
fn flows_are_deduplicated_on_name_and_version() {
    let s = server();
    let c = client(&s);
    let a = c.publish_flow(&flow("x.a")).unwrap();
    let again = c.publish_flow(&flow("x.a")).unwrap();
    let b = c.publish_flow(&flow("x.b")).unwrap();
    assert_eq!(a, again);
    assert_eq!((a, b), (FIRST_UPLOAD_ID, FIRST_UPLOAD_ID + 1));
    let mut fetched = c.get_flow(a).unwrap();
    assert_eq!(fetched.id, Some(a));
    fetched.id = None;
    assert_eq!(fetched, flow("x.a"));
}

fn draft(doc: &ArffDocument) -> (DatasetDescription, Vec<u8>) {
    let payload = arff::serialize(doc).into_bytes();
    let description = DatasetDescription {
        id: None,
        name: doc.relation.clone(),
        version: 1,
        default_target_attribute: Some("class".into()),
        file_checksum: md5_hex(&payload),
        features: feature_summary(doc),
        qualities: BTreeMap::new(),
    };
    (description, payload)
}

fn small_doc() -> ArffDocument {
    let mut doc = ArffDocument::new("uploaded", vec![Attribute::numeric("x"), Attribute::nominal("class", ["p", "q"])]);
    for i in 0..6 {
        doc.rows.push(Row::Dense(vec![Value::Number(i as f64), Value::text(if i < 3 { "p" } else { "q" })]));
    }
    doc
}

#[test]
fn dataset_and_task_uploads_roundtrip() {
    let s = server();
    let c = client(&s);
    let (description, payload) = draft(&small_doc());
    let mut corrupt = description.clone();
    corrupt.file_checksum = md5_hex(b"something else");
    assert_eq!(api_code(c.publish_dataset(&corrupt, &payload)), (codes::UPLOAD_VALIDATION, 412));
    let mut wrong_features = description.clone();
    wrong_features.features.pop();
    wrong_features.default_target_attribute = None;
    assert_eq!(api_code(c.publish_dataset(&wrong_features, &payload)).0, codes::UPLOAD_VALIDATION);

    let id = c.publish_dataset(&description, &payload).unwrap();
    assert_eq!(id, FIRST_UPLOAD_ID);
    let fetched = c.get_dataset(id).unwrap();
    assert_eq!(fetched, DatasetDescription { id: Some(id), ..description });
    assert_eq!(c.get_dataset_file(id).unwrap(), payload);

    let task = Task {
        id: None,
        task_type: TaskType::SupervisedClassification,
        dataset_id: id,
        target_name: "class".into(),
        estimation_procedure: EstimationProcedure::cross_validation(1, 3),
        class_labels: vec!["p".into(), "q".into()],
    };
    let mut bad = task.clone();
    bad.target_name = "x".into();
    assert_eq!(api_code(c.publish_task(&bad)).0, codes::UPLOAD_VALIDATION);
    let task_id = c.publish_task(&task).unwrap();
    let fetched = c.get_task(task_id).unwrap();
    assert_eq!(fetched.id, Some(task_id));
    let splits = arff::parse(std::str::from_utf8(&c.get_task_splits(task_id).unwrap()).unwrap()).unwrap();
    let folds = runner::iter_splits_for(&fetched, &splits, 6).unwrap();
    assert_eq!(folds.len(), 3);
    assert!(folds.iter().all(|f| f.test.len() == 2));
}

fn tiny_run(s: &MockServer, dir: &std::path::Path) -> (CachedClient, ModelSpec, Task, Run) {
    let cached = CachedClient::new(config(s, Some("secret")), CacheConfig::new(dir, false)).unwrap();
    let model: ModelSpec = "ref.majority".parse().unwrap();
    let task = cached.get_task(TINY_TASK).unwrap();
    let run = runner::run_model_on_task(&cached, &model, &task, &RunOptions::default()).unwrap();
    (cached, model, task, run)
}

#[test]
fn run_upload_is_validated_and_served_verbatim() {
    let s = server();
    let dir = tempfile::tempdir().unwrap();
    let (cached, model, task, run) = tiny_run(&s, dir.path());
    let c = cached.client();
    let flow_id = c.publish_flow(&omlclient::extension::model_to_flow(&model).unwrap()).unwrap();
    let with_flow = Run {
        flow_id: Some(flow_id),
        ..run.clone()
    };

    let mut off = with_flow.clone();
    for v in off.predictions[0].confidences.iter_mut() {
        *v *= 0.9;
    }
    assert_eq!(api_code(c.publish_run(&off, &task.class_labels)).0, codes::UPLOAD_VALIDATION);

    let mut lying = with_flow.clone();
    let reported = lying.local_evaluations.get_mut("predictive_accuracy").unwrap();
    *reported += 1e-6;
    assert_eq!(api_code(c.publish_run(&lying, &task.class_labels)).0, codes::UPLOAD_VALIDATION);

    let mut partial = with_flow.clone();
    partial.predictions.pop();
    partial.local_evaluations.clear();
    assert_eq!(api_code(c.publish_run(&partial, &task.class_labels)).0, codes::UPLOAD_VALIDATION);

    let published = runner::publish_run(&cached, &model, &task, &run).unwrap();
    let run_id = published.id.unwrap();
    assert_eq!(run_id, FIRST_UPLOAD_ID);
    let expected = arff::serialize(&runner::predictions_to_arff(&run, &task)).into_bytes();
    assert_eq!(c.get_bytes(&format!("run/predictions/{run_id}")).unwrap(), expected);
    let fetched = c.get_run(run_id).unwrap();
    assert_eq!(fetched.setup, run.setup);
    assert_eq!(fetched.seed, run.seed);
    assert_eq!(fetched.predictions, run.predictions);
    assert_eq!(fetched.local_evaluations, run.local_evaluations);
}

#[test]
fn injected_failures_are_retried_by_the_client() {
    let s = server();
    s.inject_failures("task/6", 2, 503);
    let mut cfg = config(&s, None);
    cfg.retries = 2;
    let c = Client::new(cfg).unwrap();
    assert_eq!(c.get_task(6).unwrap().id, Some(6));
    assert_eq!(s.request_count("task/6"), 3);

    s.inject_failures("task/31", 3, 503);
    let mut cfg = config(&s, None);
    cfg.retries = 1;
    let c = Client::new(cfg).unwrap();
    assert_eq!(api_code(c.get_task(31)).1, 503);
    assert_eq!(s.request_count("task/31"), 2);
}

#[test]
fn concurrent_requests_are_all_counted() {
    let s = server();
    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| {
                let c = client(&s);
                for _ in 0..10 {
                    c.get_task(LETTER_TASK).unwrap();
                }
            });
        }
    });
    assert_eq!(s.request_count("task/6"), 80);
    assert_eq!(s.total_requests(), 80);
    s.reset_counts();
    assert_eq!(s.total_requests(), 0);
}

#[test]
fn broken_fixtures_are_rejected_at_start() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_bundled(dir.path()).unwrap();
    std::fs::remove_dir_all(dir.path().join("dataset/61")).unwrap();
    let err = MockServer::start(dir.path()).err().expect("task 59 lost its dataset");
    assert!(err.to_string().contains("missing dataset 61"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    fixtures::write_bundled(dir.path()).unwrap();
    let evals = dir.path().join("evaluations.xml");
    let text = std::fs::read_to_string(&evals).unwrap().replacen("<flow_id>8353</flow_id>", "<flow_id>9</flow_id>", 1);
    std::fs::write(&evals, text).unwrap();
    let err = MockServer::start(dir.path()).err().expect("evaluation names a missing flow");
    assert!(err.to_string().contains("missing flow 9"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    fixtures::write_bundled(dir.path()).unwrap();
    std::fs::write(dir.path().join("dataset/6/payload.arff"), "@RELATION x\n").unwrap();
    assert!(MockServer::start(dir.path()).is_err());
}

fn arb_flow(depth: u32) -> BoxedStrategy<Flow> {
    let leaf = (
        "[a-z]{1,6}(\\.[a-z]{1,6}){0,2}",
        "[a-z0-9=.]{1,8}",
        prop::collection::btree_map("[a-z_]{1,6}", "[ -~]{0,8}", 0..4),
    )
        .prop_map(|(name, version, params)| Flow {
            parameters: params
                .into_iter()
                .map(|(name, default_value)| FlowParameter {
                    name,
                    default_value,
                    kind: "string".into(),
                })
                .collect(),
            ..Flow::leaf(name, version)
        });
    if depth == 0 {
        return leaf.boxed();
    }
    (leaf, prop::collection::btree_map("[a-z]{1,5}", arb_flow(depth - 1), 0..3))
        .prop_map(|(mut f, children)| {
            f.components = children.into_iter().map(|(role, flow)| FlowComponent { role, flow }).collect();
            f
        })
        .boxed()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Whatever the client encodes, the server decodes and serves back.
    #[test]
    fn cross_codec_flow_roundtrip(flows in prop::collection::vec(arb_flow(2), 1..4)) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::copy(bundled_fixtures().join(omlclient_mockserver::ERRORS_FILE), dir.path().join("errors.tsv")).unwrap();
        let s = MockServer::start(dir.path()).unwrap();
        let c = client(&s);
        // the first flow published under an identity is the one stored
        let mut stored: BTreeMap<(String, String), (u64, Flow)> = BTreeMap::new();
        for f in &flows {
            let id = c.publish_flow(f).unwrap();
            let (first_id, first) = stored.entry(f.identity()).or_insert((id, f.clone())).clone();
            prop_assert_eq!(id, first_id);
            let mut back = c.get_flow(id).unwrap();
            prop_assert_eq!(back.id, Some(id));
            back.id = None;
            prop_assert_eq!(back, first);
        }
    }
}
