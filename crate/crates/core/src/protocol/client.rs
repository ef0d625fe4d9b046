use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use md5::{Digest, Md5};

use crate::entities::*;

use super::codec::{self, Entity, EntitySummary};
use super::multipart::{self, Part};
use super::routes::{self, EntityKey};
use super::{decode_error, scrub, xml, ProtocolError, ServerConfig, MAX_LIST_LIMIT};

/// Blocking client for one server. Cheap to clone.
#[derive(Clone)]
pub struct Client {
    config: ServerConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("base_url", &self.config.base_url)
            .field("retries", &self.config.retries)
            .finish_non_exhaustive()
    }
}

enum Method<'a> {
    Get,
    Post(&'a multipart::Body),
}

impl Client {
    pub fn new(config: ServerConfig) -> Result<Client, ProtocolError> {
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(ProtocolError::InvalidArgument(problems.join("; ")));
        }
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Ok(Client { config, agent })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    fn url(&self, path: &str, with_key: bool) -> String {
        let mut url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        if with_key {
            if let Some(key) = &self.config.api_key {
                url.push_str("?api_key=");
                url.push_str(&routes::segment(key));
            }
        }
        url
    }

    /// Delay before retry number `attempt` (0-based): doubling backoff plus
    /// a jitter derived from the request, so reruns wait identically.
    fn delay(&self, key: &str, attempt: u32) -> Duration {
        let base = self.config.backoff.saturating_mul(1 << attempt.min(16));
        let digest = Md5::digest(format!("{key}#{attempt}").as_bytes());
        let bits = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let span = (self.config.backoff.as_nanos() as u64 / 2).max(1);
        base + Duration::from_nanos(bits % span)
    }

    fn send(&self, path: &str, method: Method<'_>) -> Result<Vec<u8>, ProtocolError> {
        let is_post = matches!(method, Method::Post(_));
        let url = self.url(path, is_post);
        let key = self.config.api_key.as_deref();
        let label = format!("{} {}", if is_post { "POST" } else { "GET" }, path);
        let mut attempt = 0;
        loop {
            let result = match &method {
                Method::Get => self.agent.get(&url).call(),
                Method::Post(body) => self
                    .agent
                    .post(&url)
                    .set("Content-Type", &body.content_type)
                    .send_bytes(&body.bytes),
            };
            let failure = match result {
                Ok(resp) => {
                    let mut buf = Vec::new();
                    match resp.into_reader().read_to_end(&mut buf) {
                        Ok(_) => return Ok(buf),
                        Err(e) => ProtocolError::Transport(scrub(&format!("{label}: {e}"), key)),
                    }
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let mut buf = Vec::new();
                    let _ = resp.into_reader().take(1 << 20).read_to_end(&mut buf);
                    let mut err = decode_error(status, &buf);
                    err.message = scrub(&err.message, key);
                    if status < 500 {
                        return Err(err.into());
                    }
                    ProtocolError::Api(err)
                }
                Err(ureq::Error::Transport(t)) => {
                    ProtocolError::Transport(scrub(&format!("{label}: {t}"), key))
                }
            };
            if attempt >= self.config.retries {
                return Err(failure);
            }
            log::debug!("{label} failed ({failure}), retrying");
            std::thread::sleep(self.delay(&label, attempt));
            attempt += 1;
        }
    }

    pub fn get_bytes(&self, path: &str) -> Result<Vec<u8>, ProtocolError> {
        self.send(path, Method::Get)
    }

    fn post(&self, path: &str, parts: &[Part]) -> Result<u64, ProtocolError> {
        let body = multipart::encode(parts);
        let bytes = self.send(path, Method::Post(&body))?;
        Ok(codec::upload_id_from_xml(&xml::parse(&bytes)?)?)
    }

    pub fn get_entity(&self, kind: EntityKind, key: &EntityKey) -> Result<Entity, ProtocolError> {
        let bytes = self.get_bytes(&routes::entity(kind, key))?;
        let entity = Entity::decode(kind, &bytes)?;
        if let Entity::Run(mut run) = entity {
            let id = run.id.unwrap_or_default();
            run.predictions = self.get_run_predictions(id)?.1;
            return Ok(Entity::Run(run));
        }
        Ok(entity)
    }

    pub fn get_dataset(&self, id: u64) -> Result<DatasetDescription, ProtocolError> {
        match self.get_entity(EntityKind::Dataset, &id.into())? {
            Entity::Dataset(d) => Ok(d),
            _ => unreachable!(),
        }
    }

    pub fn get_dataset_file(&self, id: u64) -> Result<Vec<u8>, ProtocolError> {
        self.get_bytes(&routes::dataset_file(id))
    }

    pub fn get_task(&self, id: u64) -> Result<Task, ProtocolError> {
        match self.get_entity(EntityKind::Task, &id.into())? {
            Entity::Task(t) => Ok(t),
            _ => unreachable!(),
        }
    }

    pub fn get_task_splits(&self, id: u64) -> Result<Vec<u8>, ProtocolError> {
        self.get_bytes(&routes::task_splits(id))
    }

    pub fn get_flow(&self, id: u64) -> Result<Flow, ProtocolError> {
        match self.get_entity(EntityKind::Flow, &id.into())? {
            Entity::Flow(f) => Ok(f),
            _ => unreachable!(),
        }
    }

    /// Run document together with its predictions file.
    pub fn get_run(&self, id: u64) -> Result<Run, ProtocolError> {
        match self.get_entity(EntityKind::Run, &id.into())? {
            Entity::Run(r) => Ok(r),
            _ => unreachable!(),
        }
    }

    pub fn get_run_predictions(&self, id: u64) -> Result<(Vec<String>, Vec<PredictionRow>), ProtocolError> {
        let bytes = self.get_bytes(&routes::run_predictions(id))?;
        let text = String::from_utf8(bytes).map_err(|_| super::DecodeError::new("predictions are not UTF-8"))?;
        let doc = crate::arff::parse(&text).map_err(|e| super::DecodeError::new(e.to_string()))?;
        Ok(codec::predictions_from_arff(&doc)?)
    }

    pub fn get_suite(&self, alias: &str) -> Result<Suite, ProtocolError> {
        match self.get_entity(EntityKind::Suite, &EntityKey::Alias(alias.to_string()))? {
            Entity::Suite(s) => Ok(s),
            _ => unreachable!(),
        }
    }

    pub fn list_path(
        kind: EntityKind,
        filters: &BTreeMap<String, String>,
        offset: usize,
        limit: usize,
    ) -> Result<String, ProtocolError> {
        if kind == EntityKind::Suite {
            return Err(ProtocolError::InvalidArgument("suites cannot be listed".into()));
        }
        if !(1..=MAX_LIST_LIMIT).contains(&limit) {
            return Err(ProtocolError::InvalidArgument(format!(
                "limit must lie in [1, {MAX_LIST_LIMIT}], got {limit}"
            )));
        }
        Ok(routes::list(kind, filters, offset, limit))
    }

    pub fn list_entities(
        &self,
        kind: EntityKind,
        filters: &BTreeMap<String, String>,
        offset: usize,
        limit: usize,
    ) -> Result<Vec<EntitySummary>, ProtocolError> {
        let bytes = self.get_bytes(&Self::list_path(kind, filters, offset, limit)?)?;
        Ok(codec::summaries_from_xml(kind, &xml::parse(&bytes)?)?)
    }

    pub fn evaluation_path(function: &str, flows: &[u64], tasks: &[u64]) -> Result<String, ProtocolError> {
        if function.is_empty() {
            return Err(ProtocolError::InvalidArgument("function must not be empty".into()));
        }
        if flows.is_empty() && tasks.is_empty() {
            return Err(ProtocolError::InvalidArgument(
                "at least one flow or task filter is required".into(),
            ));
        }
        Ok(routes::evaluation_list(function, flows, tasks))
    }

    /// Evaluation records with their setups for `function`, filtered by
    /// flows and tasks.
    pub fn list_evaluations_setups(
        &self,
        function: &str,
        flows: &[u64],
        tasks: &[u64],
    ) -> Result<Vec<EvaluationRecord>, ProtocolError> {
        let bytes = self.get_bytes(&Self::evaluation_path(function, flows, tasks)?)?;
        Ok(codec::evaluations_from_xml(&xml::parse(&bytes)?)?)
    }

    pub fn publish_dataset(&self, description: &DatasetDescription, arff: &[u8]) -> Result<u64, ProtocolError> {
        self.post(
            &routes::publish(EntityKind::Dataset),
            &[
                Part::xml("description", Entity::Dataset(description.clone()).to_xml()),
                Part::arff("dataset", arff),
            ],
        )
    }

    pub fn publish_flow(&self, flow: &Flow) -> Result<u64, ProtocolError> {
        self.post(
            &routes::publish(EntityKind::Flow),
            &[Part::xml("description", Entity::Flow(flow.clone()).to_xml())],
        )
    }

    pub fn publish_task(&self, task: &Task) -> Result<u64, ProtocolError> {
        self.post(
            &routes::publish(EntityKind::Task),
            &[Part::xml("description", Entity::Task(task.clone()).to_xml())],
        )
    }

    /// Publishes a run; predictions travel as an ARFF part.
    pub fn publish_run(&self, run: &Run, class_labels: &[String]) -> Result<u64, ProtocolError> {
        let doc = codec::predictions_to_arff(run.task_id, class_labels, &run.predictions);
        self.post(
            &routes::publish(EntityKind::Run),
            &[
                Part::xml("description", Entity::Run(run.clone()).to_xml()),
                Part::arff("predictions", crate::arff::serialize(&doc)),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_checks_happen_before_any_request() {
        let none = BTreeMap::new();
        assert!(matches!(
            Client::list_path(EntityKind::Dataset, &none, 0, 0),
            Err(ProtocolError::InvalidArgument(_))
        ));
        assert!(Client::list_path(EntityKind::Dataset, &none, 0, 10_001).is_err());
        assert!(Client::list_path(EntityKind::Dataset, &none, 0, 10_000).is_ok());
        assert!(Client::list_path(EntityKind::Suite, &none, 0, 5).is_err());
        assert!(Client::evaluation_path("", &[1], &[]).is_err());
        assert!(Client::evaluation_path("predictive_accuracy", &[], &[]).is_err());
    }

    #[test]
    fn key_only_on_mutating_requests() {
        let c = Client::new(ServerConfig::new("http://127.0.0.1:9/api/").with_api_key("k")).unwrap();
        assert_eq!(c.url("data/1", false), "http://127.0.0.1:9/api/data/1");
        assert_eq!(c.url("data", true), "http://127.0.0.1:9/api/data?api_key=k");
    }

    #[test]
    fn backoff_doubles_with_stable_jitter() {
        let mut cfg = ServerConfig::new("http://h/api");
        cfg.backoff = Duration::from_millis(100);
        let c = Client::new(cfg).unwrap();
        for attempt in 0..4 {
            let d = c.delay("GET task/6", attempt);
            let base = Duration::from_millis(100 << attempt);
            assert!(d >= base && d < base + Duration::from_millis(50));
            assert_eq!(d, c.delay("GET task/6", attempt));
        }
    }

    #[test]
    fn transport_failures_exhaust_retries() {
        // Nothing listens on port 9 on the loopback interface.
        let mut cfg = ServerConfig::new("http://127.0.0.1:9/api").with_api_key("s3cret");
        cfg.retries = 2;
        cfg.backoff = Duration::from_millis(1);
        let c = Client::new(cfg).unwrap();
        let err = c.publish_flow(&Flow::leaf("a.b", "1")).unwrap_err();
        assert!(matches!(err, ProtocolError::Transport(_)));
        assert!(!err.to_string().contains("s3cret"));
    }
}
