use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use crate::arff::{self, ArffDocument, DataTable};
use crate::entities::*;
use crate::protocol::codec::{self, Entity, EntitySummary};
use crate::protocol::routes::{self, EntityKey};
use crate::protocol::{xml, Client, DecodeError, ProtocolError, ServerConfig};

use super::{cache_path, fetch_cached, query_path, Artifact, CacheConfig, CacheError};

/// Read-through cache in front of a [`Client`]. In offline mode every read
/// is served from disk and publishing is refused.
#[derive(Debug, Clone)]
pub struct CachedClient {
    client: Client,
    cache: CacheConfig,
    host: String,
}

fn utf8(bytes: Vec<u8>) -> Result<String, CacheError> {
    String::from_utf8(bytes).map_err(|_| DecodeError::new("payload is not UTF-8").into())
}

impl CachedClient {
    pub fn new(server: ServerConfig, cache: CacheConfig) -> Result<CachedClient, CacheError> {
        let problems = cache.validate();
        if !problems.is_empty() {
            return Err(ProtocolError::InvalidArgument(problems.join("; ")).into());
        }
        let host = server.host_key();
        Ok(CachedClient {
            client: Client::new(server)?,
            cache,
            host,
        })
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    pub fn cache(&self) -> &CacheConfig {
        &self.cache
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn is_offline(&self) -> bool {
        self.cache.offline
    }

    fn artifact(
        &self,
        kind: EntityKind,
        key: &EntityKey,
        artifact: Artifact,
        expected: Option<&str>,
        fetch: impl FnOnce(&Client) -> Result<Vec<u8>, ProtocolError>,
    ) -> Result<Vec<u8>, CacheError> {
        let rel = cache_path(&self.host, kind, key, artifact);
        fetch_cached(&self.cache, &rel, expected, || fetch(&self.client))
    }

    /// Reads and decodes an artifact. A cached file that no longer decodes
    /// is dropped and fetched again once.
    fn decoded<T>(
        &self,
        kind: EntityKind,
        key: &EntityKey,
        artifact: Artifact,
        fetch: impl Fn(&Client) -> Result<Vec<u8>, ProtocolError>,
        decode: impl Fn(&[u8]) -> Result<T, CacheError>,
    ) -> Result<T, CacheError> {
        let bytes = self.artifact(kind, key, artifact, None, &fetch)?;
        match decode(&bytes) {
            Ok(v) => Ok(v),
            Err(e) if self.cache.offline => Err(e),
            Err(e) => {
                log::warn!("discarding undecodable cache entry for {kind} {key}: {e}");
                let _ = fs::remove_file(self.cache.root_dir.join(cache_path(&self.host, kind, key, artifact)));
                decode(&self.artifact(kind, key, artifact, None, &fetch)?)
            }
        }
    }

    pub fn get_entity(&self, kind: EntityKind, key: &EntityKey) -> Result<Entity, CacheError> {
        let path = routes::entity(kind, key);
        let entity = self.decoded(
            kind,
            key,
            Artifact::Description,
            |c| c.get_bytes(&path),
            |b| Ok(Entity::decode(kind, b)?),
        )?;
        if let Entity::Run(mut run) = entity {
            run.predictions = self.get_run_predictions(run.id.unwrap_or_default())?.1;
            return Ok(Entity::Run(run));
        }
        Ok(entity)
    }

    pub fn get_dataset(&self, id: u64) -> Result<DatasetDescription, CacheError> {
        match self.get_entity(EntityKind::Dataset, &id.into())? {
            Entity::Dataset(d) => Ok(d),
            _ => unreachable!(),
        }
    }

    /// Raw payload bytes, verified against the description's checksum.
    pub fn get_dataset_file(&self, dataset: &DatasetDescription) -> Result<Vec<u8>, CacheError> {
        let id = dataset
            .id
            .ok_or_else(|| ProtocolError::InvalidArgument("dataset has no id".into()))?;
        self.artifact(
            EntityKind::Dataset,
            &id.into(),
            Artifact::Payload,
            Some(&dataset.file_checksum),
            |c| c.get_dataset_file(id),
        )
    }

    pub fn dataset_document(&self, dataset: &DatasetDescription) -> Result<ArffDocument, CacheError> {
        Ok(arff::parse(&utf8(self.get_dataset_file(dataset)?)?)?)
    }

    /// Payload parsed and coerced into typed columns.
    pub fn fetch_dataset_payload(&self, dataset: &DatasetDescription) -> Result<DataTable, CacheError> {
        Ok(arff::coerce_table(&self.dataset_document(dataset)?))
    }

    pub fn get_dataset_features(&self, id: u64) -> Result<Vec<Feature>, CacheError> {
        self.decoded(
            EntityKind::Dataset,
            &id.into(),
            Artifact::Features,
            |c| c.get_bytes(&routes::dataset_features(id)),
            |b| Ok(codec::features_from_xml(&xml::parse(b)?)?),
        )
    }

    pub fn get_task(&self, id: u64) -> Result<Task, CacheError> {
        match self.get_entity(EntityKind::Task, &id.into())? {
            Entity::Task(t) => Ok(t),
            _ => unreachable!(),
        }
    }

    pub fn get_task_splits(&self, id: u64) -> Result<ArffDocument, CacheError> {
        self.decoded(
            EntityKind::Task,
            &id.into(),
            Artifact::Splits,
            |c| c.get_task_splits(id),
            |b| Ok(arff::parse(&utf8(b.to_vec())?)?),
        )
    }

    pub fn get_flow(&self, id: u64) -> Result<Flow, CacheError> {
        match self.get_entity(EntityKind::Flow, &id.into())? {
            Entity::Flow(f) => Ok(f),
            _ => unreachable!(),
        }
    }

    pub fn get_run(&self, id: u64) -> Result<Run, CacheError> {
        match self.get_entity(EntityKind::Run, &id.into())? {
            Entity::Run(r) => Ok(r),
            _ => unreachable!(),
        }
    }

    /// Raw predictions file of a published run.
    pub fn get_run_predictions_file(&self, id: u64) -> Result<Vec<u8>, CacheError> {
        self.artifact(EntityKind::Run, &id.into(), Artifact::Predictions, None, |c| {
            c.get_bytes(&routes::run_predictions(id))
        })
    }

    pub fn get_run_predictions(&self, id: u64) -> Result<(Vec<String>, Vec<PredictionRow>), CacheError> {
        self.decoded(
            EntityKind::Run,
            &id.into(),
            Artifact::Predictions,
            |c| c.get_bytes(&routes::run_predictions(id)),
            |b| {
                let doc = arff::parse(&utf8(b.to_vec())?)?;
                Ok(codec::predictions_from_arff(&doc)?)
            },
        )
    }

    pub fn get_suite(&self, alias: &str) -> Result<Suite, CacheError> {
        match self.get_entity(EntityKind::Suite, &EntityKey::Alias(alias.to_string()))? {
            Entity::Suite(s) => Ok(s),
            _ => unreachable!(),
        }
    }

    /// List queries are refreshed on every online call and served from the
    /// last stored answer when offline.
    fn query(&self, namespace: &str, path: &str) -> Result<xml::Element, CacheError> {
        let rel = query_path(&self.host, namespace, path);
        let bytes = if self.cache.offline {
            fs::read(self.cache.root_dir.join(&rel)).map_err(|_| CacheError::Offline(rel.display().to_string()))?
        } else {
            let bytes = self.client.get_bytes(path)?;
            super::write_atomic(&self.cache.root_dir.join(&rel), &bytes)?;
            bytes
        };
        Ok(xml::parse(&bytes)?)
    }

    pub fn list_entities(
        &self,
        kind: EntityKind,
        filters: &BTreeMap<String, String>,
        offset: usize,
        limit: usize,
    ) -> Result<Vec<EntitySummary>, CacheError> {
        let path = Client::list_path(kind, filters, offset, limit)?;
        Ok(codec::summaries_from_xml(kind, &self.query(kind.as_str(), &path)?)?)
    }

    pub fn list_evaluations_setups(
        &self,
        function: &str,
        flows: &[u64],
        tasks: &[u64],
    ) -> Result<Vec<EvaluationRecord>, CacheError> {
        let path = Client::evaluation_path(function, flows, tasks)?;
        Ok(codec::evaluations_from_xml(&self.query("evaluation", &path)?)?)
    }

    fn online(&self, what: &str) -> Result<&Client, CacheError> {
        if self.cache.offline {
            return Err(CacheError::Offline(format!("{what} requires a server connection")));
        }
        Ok(&self.client)
    }

    /// Fills the checksum and features of a draft from its payload,
    /// validates it, and publishes both.
    pub fn upload_dataset(&self, draft: &DatasetDescription, payload: &[u8]) -> Result<u64, CacheError> {
        let doc = arff::parse(&utf8(payload.to_vec())?)?;
        let description = DatasetDescription {
            id: None,
            file_checksum: super::md5_hex(payload),
            features: arff::feature_summary(&doc),
            ..draft.clone()
        };
        let problems = description.validate();
        if !problems.is_empty() {
            return Err(DecodeError::new(format!("invalid dataset: {}", problems.join("; "))).into());
        }
        self.publish_dataset(&description, payload)
    }

    pub fn publish_dataset(&self, description: &DatasetDescription, arff: &[u8]) -> Result<u64, CacheError> {
        Ok(self.online("publishing")?.publish_dataset(description, arff)?)
    }

    pub fn publish_flow(&self, flow: &Flow) -> Result<u64, CacheError> {
        Ok(self.online("publishing")?.publish_flow(flow)?)
    }

    pub fn publish_task(&self, task: &Task) -> Result<u64, CacheError> {
        Ok(self.online("publishing")?.publish_task(task)?)
    }

    pub fn publish_run(&self, run: &Run, class_labels: &[String]) -> Result<u64, CacheError> {
        Ok(self.online("publishing")?.publish_run(run, class_labels)?)
    }

    /// Clears this server's entries; see [`super::clear`].
    pub fn clear(&self, kind: Option<EntityKind>, key: Option<&EntityKey>) -> Result<usize, CacheError> {
        super::clear(&self.cache, Some(&self.host), kind, key)
    }

    pub fn cache_file(&self, kind: EntityKind, key: &EntityKey, artifact: Artifact) -> PathBuf {
        self.cache.root_dir.join(cache_path(&self.host, kind, key, artifact))
    }
}
