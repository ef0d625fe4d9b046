//! On-disk cache for entity descriptions and payload files.
//!
//! Layout: `{host}/{kind}/{id}/{artifact}.{ext}` below the cache root.
//! Payloads are verified against their published MD5; files are written to
//! a temporary file in the target directory and renamed into place, so
//! readers never see partial content.

mod cached_client;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};
use thiserror::Error;

use crate::arff::ArffError;
use crate::entities::EntityKind;
use crate::protocol::routes::EntityKey;
use crate::protocol::{DecodeError, ProtocolError};

pub use cached_client::CachedClient;

/// Environment variable naming the cache root.
pub const CACHE_DIR_ENV: &str = "OMLCLIENT_CACHEDIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheConfig {
    pub root_dir: PathBuf,
    pub offline: bool,
}

impl CacheConfig {
    pub fn new(root_dir: impl Into<PathBuf>, offline: bool) -> Self {
        CacheConfig {
            root_dir: root_dir.into(),
            offline,
        }
    }

    /// Explicit root, else `$OMLCLIENT_CACHEDIR`, else `~/.omlclient/cache`.
    pub fn resolve(explicit: Option<PathBuf>, offline: bool) -> Self {
        let root = explicit
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(default_root);
        CacheConfig::new(root, offline)
    }

    /// Online caches must be writable; the root is created if needed.
    pub fn validate(&self) -> Vec<String> {
        if self.offline {
            return Vec::new();
        }
        match fs::create_dir_all(&self.root_dir).and_then(|_| tempfile::tempfile_in(&self.root_dir)) {
            Ok(_) => Vec::new(),
            Err(e) => vec![format!("cache root {} is not writable: {e}", self.root_dir.display())],
        }
    }
}

pub fn default_root() -> PathBuf {
    let home = std::env::var_os("HOME")
        .or_else(|| std::env::var_os("USERPROFILE"))
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    home.join(".omlclient").join("cache")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Artifact {
    Description,
    Payload,
    Splits,
    Features,
    Predictions,
}

impl Artifact {
    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Description => "description.xml",
            Artifact::Payload => "payload.arff",
            Artifact::Splits => "splits.arff",
            Artifact::Features => "features.xml",
            Artifact::Predictions => "predictions.arff",
        }
    }
}

/// Relative cache path of one artifact. Pure; injective over its inputs
/// because keys are percent-encoded and hosts cannot contain `/`.
pub fn cache_path(host: &str, kind: EntityKind, key: &EntityKey, artifact: Artifact) -> PathBuf {
    [host, kind.as_str(), &key_segment(key), artifact.file_name()]
    .iter()
    .collect()
}

fn key_segment(key: &EntityKey) -> String {
    let segment = crate::protocol::routes::segment(&key.to_string());
    // `.` and `..` would be collapsed by path handling
    if segment.bytes().all(|b| b == b'.') {
        segment.replace('.', "%2E")
    } else {
        segment
    }
}

/// Relative path of a cached list query, keyed by the request path.
pub fn query_path(host: &str, namespace: &str, request_path: &str) -> PathBuf {
    [host, namespace, "list", &format!("{}.xml", md5_hex(request_path.as_bytes()))]
        .iter()
        .collect()
}

pub fn md5_hex(bytes: &[u8]) -> String {
    hex::encode(Md5::digest(bytes))
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("offline and not cached: {0}")]
    Offline(String),
    #[error("checksum mismatch for {key}: expected {expected}, got {actual}")]
    Checksum {
        key: String,
        expected: String,
        actual: String,
    },
    #[error("cache I/O error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Arff(#[from] ArffError),
}

fn io_err(path: &Path, e: std::io::Error) -> CacheError {
    CacheError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Returns the cached bytes at `rel` if present and matching `expected`,
/// otherwise fetches, verifies, and stores them. Offline misses fail
/// without calling `fetcher`; bytes that fail verification are not stored.
pub fn fetch_cached<F>(cfg: &CacheConfig, rel: &Path, expected: Option<&str>, fetcher: F) -> Result<Vec<u8>, CacheError>
where
    F: FnOnce() -> Result<Vec<u8>, ProtocolError>,
{
    let path = cfg.root_dir.join(rel);
    let key = rel.display().to_string();
    match fs::read(&path) {
        Ok(bytes) => match expected {
            Some(sum) if !md5_hex(&bytes).eq_ignore_ascii_case(sum) => {
                log::warn!("cached file {key} fails its checksum, treating as a miss");
            }
            _ => return Ok(bytes),
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(&path, e)),
    }
    if cfg.offline {
        return Err(CacheError::Offline(key));
    }
    let bytes = fetcher()?;
    if let Some(sum) = expected {
        let actual = md5_hex(&bytes);
        if !actual.eq_ignore_ascii_case(sum) {
            return Err(CacheError::Checksum {
                key,
                expected: sum.to_string(),
                actual,
            });
        }
    }
    write_atomic(&path, &bytes)?;
    Ok(bytes)
}

/// Removes cached entries. `kind`/`key` narrow the scope; with neither,
/// the whole cache root is cleared. Returns the number of files removed.
pub fn clear(cfg: &CacheConfig, host: Option<&str>, kind: Option<EntityKind>, key: Option<&EntityKey>) -> Result<usize, CacheError> {
    let hosts: Vec<PathBuf> = match host {
        Some(h) => vec![cfg.root_dir.join(h)],
        None => match fs::read_dir(&cfg.root_dir) {
            Ok(rd) => rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(io_err(&cfg.root_dir, e)),
        },
    };
    let mut removed = 0;
    for h in hosts {
        let target = match (kind, key) {
            (Some(k), Some(id)) => h.join(k.as_str()).join(key_segment(id)),
            (Some(k), None) => h.join(k.as_str()),
            _ => h,
        };
        if target.exists() {
            removed += count_files(&target);
            fs::remove_dir_all(&target).map_err(|e| io_err(&target, e))?;
        }
    }
    Ok(removed)
}

fn count_files(dir: &Path) -> usize {
    match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| {
                let p = e.path();
                if p.is_dir() {
                    count_files(&p)
                } else {
                    1
                }
            })
            .sum(),
        Err(_) => 0,
    }
}

#[cfg(test)]
mod tests;
