//! Hermetic HTTP test double for the omlclient wire protocol.
//!
//! Serves fixture entities over the same endpoint map and codec the client
//! uses, validates uploads, and counts requests per endpoint.
//!
//! ```no_run
//! let server = omlclient_mockserver::MockServer::bundled().unwrap();
//! println!("{}", server.base_url());
//! assert_eq!(server.request_count("task/6"), 0);
//! ```

pub mod fixtures;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use thiserror::Error;

use store::{Reply, Store};

pub use store::{ACCURACY_TOLERANCE, ERRORS_FILE, EVALUATIONS_FILE, FIRST_UPLOAD_ID};

/// Path prefix of every endpoint.
pub const API_PREFIX: &str = "/api/v1/xml";

const WORKERS: usize = 8;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("cannot bind: {0}")]
    Bind(String),
}

struct Shared {
    store: Mutex<Store>,
    counts: Mutex<BTreeMap<String, u64>>,
    total: AtomicU64,
    /// endpoint -> (remaining failures, HTTP status)
    failures: Mutex<BTreeMap<String, (u32, u16)>>,
}

/// A running server. Dropping it shuts the listener down.
pub struct MockServer {
    base_url: String,
    shared: Arc<Shared>,
    http: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
}

/// Directory of the fixtures shipped with this crate.
pub fn bundled_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn query_param(query: &str, name: &str) -> Option<String> {
    query.split('&').find_map(|pair| {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        (k == name).then(|| omlclient::protocol::routes::decode_segment(v))
    })
}

impl MockServer {
    /// Loads and checks `fixtures`, then listens on an ephemeral port of
    /// 127.0.0.1.
    pub fn start(fixtures: impl AsRef<Path>) -> Result<MockServer, MockError> {
        Self::start_on(fixtures, "127.0.0.1:0")
    }

    pub fn bundled() -> Result<MockServer, MockError> {
        Self::start(bundled_fixtures())
    }

    pub fn start_on(fixtures: impl AsRef<Path>, addr: &str) -> Result<MockServer, MockError> {
        let store = Store::load(fixtures.as_ref())?;
        let http = Arc::new(tiny_http::Server::http(addr).map_err(|e| MockError::Bind(e.to_string()))?);
        let port = http
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| MockError::Bind("not an IP listener".into()))?;
        let shared = Arc::new(Shared {
            store: Mutex::new(store),
            counts: Mutex::new(BTreeMap::new()),
            total: AtomicU64::new(0),
            failures: Mutex::new(BTreeMap::new()),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let http = Arc::clone(&http);
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    while let Ok(request) = http.recv() {
                        shared.handle(request);
                    }
                })
            })
            .collect();
        Ok(MockServer {
            base_url: format!("http://127.0.0.1:{port}{API_PREFIX}"),
            shared,
            http,
            workers,
        })
    }

    /// `http://127.0.0.1:PORT/api/v1/xml`
    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Requests seen for one endpoint, e.g. `"task/6"` or `"run"` for run
    /// uploads.
    pub fn request_count(&self, endpoint: &str) -> u64 {
        self.shared.counts.lock().unwrap().get(endpoint).copied().unwrap_or(0)
    }

    pub fn request_counts(&self) -> BTreeMap<String, u64> {
        self.shared.counts.lock().unwrap().clone()
    }

    pub fn total_requests(&self) -> u64 {
        self.shared.total.load(Ordering::SeqCst)
    }

    pub fn reset_counts(&self) {
        self.shared.counts.lock().unwrap().clear();
        self.shared.total.store(0, Ordering::SeqCst);
    }

    /// Makes the next `times` requests to `endpoint` fail with `status`.
    pub fn inject_failures(&self, endpoint: &str, times: u32, status: u16) {
        self.shared
            .failures
            .lock()
            .unwrap()
            .insert(endpoint.to_string(), (times, status));
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.http.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Shared {
    fn handle(&self, mut request: tiny_http::Request) {
        let url = request.url().to_string();
        let (path, query) = url.split_once('?').unwrap_or((&url, ""));
        let endpoint = path
            .strip_prefix(API_PREFIX)
            .map(|p| p.trim_matches('/').to_string());
        let key = endpoint.clone().unwrap_or_else(|| path.trim_matches('/').to_string());
        *self.counts.lock().unwrap().entry(key.clone()).or_default() += 1;
        self.total.fetch_add(1, Ordering::SeqCst);

        let injected = {
            let mut failures = self.failures.lock().unwrap();
            match failures.get_mut(&key) {
                Some((n, status)) if *n > 0 => {
                    *n -= 1;
                    Some(*status)
                }
                _ => None,
            }
        };
        let reply = if let Some(status) = injected {
            Reply::error(status, 0, "injected failure")
        } else {
            let segments: Vec<&str> = match &endpoint {
                Some(e) if !e.is_empty() => e.split('/').collect(),
                _ => Vec::new(),
            };
            match request.method() {
                tiny_http::Method::Get => self.store.lock().unwrap().get(&segments),
                tiny_http::Method::Post => {
                    let content_type = request
                        .headers()
                        .iter()
                        .find(|h| h.field.equiv("Content-Type"))
                        .map(|h| h.value.as_str().to_string())
                        .unwrap_or_default();
                    let mut body = Vec::new();
                    if let Err(e) = request.as_reader().read_to_end(&mut body) {
                        log::warn!("reading request body: {e}");
                    }
                    let api_key = query_param(query, "api_key");
                    self.store
                        .lock()
                        .unwrap()
                        .post(&segments, api_key.as_deref(), &content_type, &body)
                }
                _ => self.store.lock().unwrap().unknown_route(&key),
            }
        };
        log::debug!("{} {key} -> {}", request.method(), reply.status);
        let header = tiny_http::Header::from_bytes("Content-Type", reply.content_type).expect("static header");
        let response = tiny_http::Response::from_data(reply.body)
            .with_status_code(reply.status)
            .with_header(header);
        if let Err(e) = request.respond(response) {
            log::warn!("writing response: {e}");
        }
    }
}
