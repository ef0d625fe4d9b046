use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use omlclient_cli::{run_in, Context, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
use omlclient_mockserver::MockServer;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn invoke(home: &Path, args: &[&str]) -> Outcome {
    let ctx = Context {
        env: BTreeMap::from([("HOME".to_string(), home.display().to_string())]),
    };
    let argv = std::iter::once("omlclient").chain(args.iter().copied());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_in(&ctx, argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

struct Env {
    server: MockServer,
    home: tempfile::TempDir,
    cache: tempfile::TempDir,
}

impl Env {
    fn new() -> Env {
        Env {
            server: MockServer::bundled().unwrap(),
            home: tempfile::tempdir().unwrap(),
            cache: tempfile::tempdir().unwrap(),
        }
    }

    fn run(&self, args: &[&str]) -> Outcome {
        let cache = self.cache.path().display().to_string();
        let mut full = vec!["--server", self.server.base_url(), "--cachedir", &cache];
        full.extend_from_slice(args);
        invoke(self.home.path(), &full)
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert_eq!(o.code, EXIT_OK, "{args:?}: {}", o.stderr);
        o.stdout
    }
}

fn error_json(o: &Outcome) -> serde_json::Value {
    serde_json::from_str(o.stderr.trim()).unwrap_or_else(|e| panic!("{e}: {:?}", o.stderr))
}

#[test]
fn help_and_version_exit_zero() {
    let home = tempfile::tempdir().unwrap();
    let help = invoke(home.path(), &["--help"]);
    assert_eq!(help.code, EXIT_OK);
    assert!(help.stdout.contains("datasets") && help.stdout.contains("evals"));
    let version = invoke(home.path(), &["--version"]);
    assert_eq!(version.code, EXIT_OK);
    assert!(version.stdout.starts_with("omlclient "));
}

#[test]
fn usage_errors_exit_two() {
    let home = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["datasets", "get", "not-a-number"],
        &["run", "--model", "majority"],
        &["run", "--task", "6", "--suite", "x", "--model", "majority"],
        &["cache", "clear", "--key", "6"],
    ] {
        let o = invoke(home.path(), args);
        assert_eq!(o.code, EXIT_USAGE, "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn list_and_get() {
    let env = Env::new();
    let all = env.ok(&["datasets", "list"]);
    let ids: Vec<&str> = all.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, ["6", "31", "61", "100", "101", "102", "103"]);
    let iris = env.ok(&["datasets", "list", "--name", "iris"]);
    assert!(iris.starts_with("61\tiris\t"), "{iris}");
    assert_eq!(env.ok(&["datasets", "list", "--limit", "2", "--offset", "1"]).lines().count(), 2);

    let tasks = env.ok(&["tasks", "list", "--filter", "dataset_id=61"]);
    assert_eq!(tasks.lines().count(), 1);
    assert!(tasks.starts_with("59\t"));

    assert!(env.ok(&["tasks", "get", "59"]).contains("<id>59</id>"));
    let suite = env.ok(&["suites", "get", "local-mini"]);
    assert!(suite.contains("local-mini"));
    let dataset = env.ok(&["datasets", "get", "102", "--with-data"]);
    assert!(dataset.contains("<name>tiny</name>"));
    assert_eq!(env.server.request_count("data/download/102"), 1);
}

#[test]
fn domain_errors_are_json() {
    let env = Env::new();
    let missing = env.run(&["datasets", "get", "999"]);
    assert_eq!(missing.code, EXIT_DOMAIN);
    let err = error_json(&missing);
    assert_eq!(err["error"], "api");
    assert_eq!(err["code"], 111);

    let bad_filter = env.run(&["datasets", "list", "--filter", "nokeyvalue"]);
    assert_eq!(bad_filter.code, EXIT_DOMAIN);
    assert_eq!(error_json(&bad_filter)["error"], "invalid_argument");

    let bad_model = env.run(&["run", "--task", "202", "--model", "forest"]);
    assert_eq!(bad_model.code, EXIT_DOMAIN);
    assert_eq!(error_json(&bad_model)["error"], "model");
}

#[test]
fn publishing_needs_an_api_key() {
    let env = Env::new();
    let o = env.run(&["run", "--task", "202", "--model", "majority", "--publish"]);
    assert_eq!(o.code, EXIT_DOMAIN);
    let err = error_json(&o);
    assert_eq!(err["code"], 103, "{err}");

    let published = env.ok(&["--apikey", "secret", "run", "--task", "202", "--model", "majority", "--publish"]);
    let fields: Vec<&str> = published.trim().split('\t').collect();
    assert_eq!(fields[0], "task 202");
    assert_eq!(fields[1], "predictive_accuracy=0.5");
    assert_eq!(fields[2], "run 10000");
}

#[test]
fn upload_dataset_then_create_and_run_a_task() {
    let env = Env::new();
    let dir = tempfile::tempdir().unwrap();
    let description = dir.path().join("d.xml");
    let data = dir.path().join("d.arff");
    std::fs::write(
        &description,
        "<dataset><name>uploaded</name><version>1</version><default_target_attribute>class</default_target_attribute></dataset>",
    )
    .unwrap();
    let mut arff = String::from("@RELATION uploaded\n@ATTRIBUTE x NUMERIC\n@ATTRIBUTE class {a,b}\n@DATA\n");
    for i in 0..20 {
        // a wide gap keeps every fold's midpoint threshold between the classes
        let (x, class) = if i < 10 { (i, "a") } else { (100 + i, "b") };
        arff.push_str(&format!("{x},{class}\n"));
    }
    std::fs::write(&data, arff).unwrap();

    let d = (description.display().to_string(), data.display().to_string());
    let id = env.ok(&["--apikey", "k", "datasets", "upload", "--description", &d.0, "--data", &d.1]);
    assert_eq!(id.trim(), "10000");
    let got = env.ok(&["datasets", "get", "10000", "--with-data"]);
    assert!(got.contains("<name>uploaded</name>") && got.contains("<file_checksum>"));

    let task = env.ok(&["--apikey", "k", "tasks", "create", "--dataset", "10000", "--folds", "4"]);
    assert_eq!(task.trim(), "10000");
    let run = env.ok(&["run", "--task", "10000", "--model", "stump"]);
    assert_eq!(run.trim(), "task 10000\tpredictive_accuracy=1");

    let holdout = env.ok(&["--apikey", "k", "tasks", "create", "--dataset", "10000", "--holdout", "25", "--repeats", "2"]);
    assert_eq!(holdout.trim(), "10001");
    env.ok(&["tasks", "get", "10001", "--with-splits"]);

    let no_class = env.run(&["--apikey", "k", "tasks", "create", "--dataset", "10000", "--target", "x"]);
    assert_eq!(no_class.code, EXIT_DOMAIN);
}

#[test]
fn cache_clear_forces_refetch() {
    let env = Env::new();
    env.ok(&["tasks", "get", "6"]);
    env.ok(&["tasks", "get", "6"]);
    assert_eq!(env.server.request_count("task/6"), 1);
    let removed = env.ok(&["cache", "clear", "--kind", "task", "--key", "6"]);
    assert_eq!(removed.trim(), "removed 1 files");
    env.ok(&["tasks", "get", "6"]);
    assert_eq!(env.server.request_count("task/6"), 2);
    assert_eq!(env.run(&["cache", "clear", "--kind", "planet"]).code, EXIT_DOMAIN);
}

#[test]
fn settings_come_from_the_config_file() {
    let server = MockServer::bundled().unwrap();
    let home = tempfile::tempdir().unwrap();
    let cache = home.path().join("elsewhere");
    std::fs::create_dir_all(home.path().join(".omlclient")).unwrap();
    std::fs::write(
        home.path().join(".omlclient/config"),
        format!("server = {}\ncachedir = {}\n", server.base_url(), cache.display()),
    )
    .unwrap();
    let o = invoke(home.path(), &["suites", "get", "OpenML-CC18"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let port = server.base_url().split(':').nth(2).unwrap().split('/').next().unwrap();
    assert!(cache.join(format!("127.0.0.1_{port}/suite/OpenML-CC18")).is_dir());

    let broken = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(broken.path(), "servr = x\n").unwrap();
    let path = broken.path().display().to_string();
    let o = invoke(home.path(), &["--config", &path, "suites", "get", "x"]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert_eq!(error_json(&o)["error"], "config");
}

#[test]
fn binary_reports_exit_codes() {
    let server = MockServer::bundled().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_omlclient");
    let base = ["--server", server.base_url(), "--cachedir", cache.path().to_str().unwrap()];
    let ok = Command::new(bin).args(base).args(["datasets", "list", "--name", "tiny"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&ok.stdout).split('\t').next(), Some("102"));
    let offline = Command::new(bin).args(base).args(["--offline", "tasks", "get", "6"]).output().unwrap();
    assert_eq!(offline.status.code(), Some(1));
    let usage = Command::new(bin).arg("nope").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}
