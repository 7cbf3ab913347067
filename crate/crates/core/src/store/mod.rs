//! Durable persistence for every record family of a study.
//!
//! Layout under the store root:
//!
//! ```text
//! study.json                      StudyRecord
//! tables/<name>                   frequency tables (TSV)
//! samples/<name>                  candidate lists, label templates, samples (TSV)
//! runs/<run_id>/ledger.jsonl      capture attempts (append-only)
//! runs/<run_id>/snapshots.jsonl   snapshot outcomes (append-only)
//! runs/<run_id>/run.json          materialized CollectionRun
//! snapshots/<sha256>              raw document bytes
//! snapshots/<sha256>.meta.json    sidecar metadata
//! study/<run_id>/tasks.json       pooled judgment tasks
//! study/<run_id>/*.jsonl          sessions, leases, judgments, vouchers, verdicts
//! reports/<run_id>/               CSV exports and report.json
//! ```
//!
//! Record writes go through a temp file + rename, so a reader sees either the
//! previous or the new version. Logs are append-only, see [`log`].

pub mod log;

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use log::{AppendLog, LogEntry};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}:{line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad key {0:?}")]
    BadKey(String),
}

/// Invariant check run before a record is written.
pub trait Validate {
    fn validate(&self) -> Result<(), String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Tables,
    Samples,
    Runs,
    Snapshots,
    Study,
    Reports,
}

impl Family {
    pub fn dir(self) -> &'static str {
        match self {
            Family::Tables => "tables",
            Family::Samples => "samples",
            Family::Runs => "runs",
            Family::Snapshots => "snapshots",
            Family::Study => "study",
            Family::Reports => "reports",
        }
    }
}

/// Hex SHA-256 of snapshot content.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentHash(pub String);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(hex::encode(Sha256::digest(bytes)))
    }

    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
            .then(|| ContentHash(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ContentHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobMeta {
    pub content_type: String,
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyStatus {
    Sampling,
    Collecting,
    Judging,
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub sample: Option<String>,
    pub runs: Vec<String>,
    pub seed: u64,
    pub created_at: DateTime<Utc>,
    pub status: StudyStatus,
}

impl Validate for StudyRecord {
    fn validate(&self) -> Result<(), String> {
        if self.study_id.trim().is_empty() {
            return Err("empty study_id".into());
        }
        Ok(())
    }
}

/// Storage boundary. [`FsStore`] is the directory-backed implementation.
pub trait RecordStore: Send + Sync {
    fn put_bytes(&self, family: Family, key: &str, bytes: &[u8]) -> Result<(), StoreError>;
    fn get_bytes(&self, family: Family, key: &str) -> Result<Option<Vec<u8>>, StoreError>;
    /// Idempotent by content hash.
    fn put_blob(&self, bytes: &[u8], content_type: &str) -> Result<ContentHash, StoreError>;
    fn get_blob(&self, hash: &ContentHash) -> Result<Option<(Vec<u8>, BlobMeta)>, StoreError>;
}

pub trait RecordStoreExt: RecordStore {
    fn put_json<T: Serialize + Validate>(
        &self,
        family: Family,
        key: &str,
        value: &T,
    ) -> Result<(), StoreError> {
        value.validate().map_err(StoreError::Invalid)?;
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put_bytes(family, key, &bytes)
    }

    fn get_json<T: DeserializeOwned>(
        &self,
        family: Family,
        key: &str,
    ) -> Result<Option<T>, StoreError> {
        match self.get_bytes(family, key)? {
            Some(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            None => Ok(None),
        }
    }
}

impl<S: RecordStore + ?Sized> RecordStoreExt for S {}

#[derive(Debug, Clone)]
pub struct FsStore {
    root: PathBuf,
}

const STUDY_FILE: &str = "study.json";

impl FsStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        for family in [
            Family::Tables,
            Family::Samples,
            Family::Runs,
            Family::Snapshots,
            Family::Study,
            Family::Reports,
        ] {
            fs::create_dir_all(root.join(family.dir()))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolve `key` inside a family directory, refusing anything that could
    /// escape the store root.
    pub fn path(&self, family: Family, key: &str) -> Result<PathBuf, StoreError> {
        let rel = Path::new(key);
        if key.is_empty()
            || rel
                .components()
                .any(|c| !matches!(c, Component::Normal(_)))
        {
            return Err(StoreError::BadKey(key.to_string()));
        }
        Ok(self.root.join(family.dir()).join(rel))
    }

    pub fn open_log<T: Serialize + DeserializeOwned>(
        &self,
        family: Family,
        key: &str,
    ) -> Result<(AppendLog<T>, Vec<LogEntry<T>>), StoreError> {
        AppendLog::open(self.path(family, key)?)
    }

    pub fn put_text(&self, family: Family, key: &str, text: &str) -> Result<(), StoreError> {
        self.put_bytes(family, key, text.as_bytes())
    }

    pub fn get_text(&self, family: Family, key: &str) -> Result<Option<String>, StoreError> {
        match self.get_bytes(family, key)? {
            Some(b) => String::from_utf8(b)
                .map(Some)
                .map_err(|e| StoreError::Invalid(format!("{key}: {e}"))),
            None => Ok(None),
        }
    }

    /// Create the study record, or return the existing one. A different seed
    /// for an existing study is rejected: the seed is fixed at creation.
    pub fn create_or_open_study(&self, record: &StudyRecord) -> Result<StudyRecord, StoreError> {
        if let Some(existing) = self.get_study()? {
            if existing.study_id != record.study_id {
                return Err(StoreError::Invalid(format!(
                    "store belongs to study {:?}, not {:?}",
                    existing.study_id, record.study_id
                )));
            }
            if existing.seed != record.seed {
                return Err(StoreError::Invalid(format!(
                    "study seed is immutable (recorded {}, requested {})",
                    existing.seed, record.seed
                )));
            }
            return Ok(existing);
        }
        record.validate().map_err(StoreError::Invalid)?;
        self.write_study(record)?;
        Ok(record.clone())
    }

    pub fn get_study(&self) -> Result<Option<StudyRecord>, StoreError> {
        let path = self.root.join(STUDY_FILE);
        match fs::read(&path) {
            Ok(b) => Ok(Some(serde_json::from_slice(&b)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn require_study(&self) -> Result<StudyRecord, StoreError> {
        self.get_study()?
            .ok_or_else(|| StoreError::NotFound("study".into()))
    }

    /// Update mutable study fields. The seed and id cannot change.
    pub fn update_study(
        &self,
        f: impl FnOnce(&mut StudyRecord),
    ) -> Result<StudyRecord, StoreError> {
        let mut record = self.require_study()?;
        let (id, seed, created) = (record.study_id.clone(), record.seed, record.created_at);
        f(&mut record);
        if record.study_id != id || record.seed != seed || record.created_at != created {
            return Err(StoreError::Invalid("study id, seed and creation time are immutable".into()));
        }
        record.validate().map_err(StoreError::Invalid)?;
        self.write_study(&record)?;
        Ok(record)
    }

    fn write_study(&self, record: &StudyRecord) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec_pretty(record)?;
        bytes.push(b'\n');
        atomic_write(&self.root.join(STUDY_FILE), &bytes)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}tmp",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl RecordStore for FsStore {
    fn put_bytes(&self, family: Family, key: &str, bytes: &[u8]) -> Result<(), StoreError> {
        atomic_write(&self.path(family, key)?, bytes)
    }

    fn get_bytes(&self, family: Family, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        match fs::read(self.path(family, key)?) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn put_blob(&self, bytes: &[u8], content_type: &str) -> Result<ContentHash, StoreError> {
        let hash = ContentHash::of(bytes);
        let object = self.path(Family::Snapshots, hash.as_str())?;
        if object.exists() {
            return Ok(hash);
        }
        let meta = BlobMeta {
            content_type: content_type.to_string(),
            len: bytes.len() as u64,
        };
        // Sidecar first: an object without metadata is never visible.
        atomic_write(
            &self.path(Family::Snapshots, &format!("{hash}.meta.json"))?,
            &serde_json::to_vec(&meta)?,
        )?;
        atomic_write(&object, bytes)?;
        Ok(hash)
    }

    fn get_blob(&self, hash: &ContentHash) -> Result<Option<(Vec<u8>, BlobMeta)>, StoreError> {
        let Some(bytes) = self.get_bytes(Family::Snapshots, hash.as_str())? else {
            return Ok(None);
        };
        let meta: BlobMeta = self
            .get_json(Family::Snapshots, &format!("{hash}.meta.json"))?
            .ok_or_else(|| StoreError::NotFound(format!("metadata for {hash}")))?;
        Ok(Some((bytes, meta)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(seed: u64) -> StudyRecord {
        StudyRecord {
            study_id: "s1".into(),
            sample: None,
            runs: vec![],
            seed,
            created_at: DateTime::parse_from_rfc3339("2011-05-01T00:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
            status: StudyStatus::Sampling,
        }
    }

    #[test]
    fn same_snapshot_bytes_stored_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        let a = store.put_blob(b"<html>x</html>", "text/html").unwrap();
        let b = store.put_blob(b"<html>x</html>", "text/html").unwrap();
        assert_eq!(a, b);
        let objects = fs::read_dir(dir.path().join("snapshots"))
            .unwrap()
            .filter(|e| !e.as_ref().unwrap().file_name().to_string_lossy().contains('.'))
            .count();
        assert_eq!(objects, 1);
        let (bytes, meta) = store.get_blob(&a).unwrap().unwrap();
        assert_eq!(bytes, b"<html>x</html>");
        assert_eq!(meta.content_type, "text/html");
    }

    #[test]
    fn unknown_study_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        assert!(store.get_study().unwrap().is_none());
        assert!(matches!(store.require_study(), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn study_seed_is_immutable() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        store.create_or_open_study(&study(7)).unwrap();
        assert!(store.create_or_open_study(&study(8)).is_err());
        assert!(store.update_study(|s| s.seed = 9).is_err());
        let s = store
            .update_study(|s| s.runs.push("run-1".into()))
            .unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(store.require_study().unwrap().runs, vec!["run-1"]);
    }

    #[test]
    fn invalid_record_is_rejected_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        let mut bad = study(1);
        bad.study_id = " ".into();
        assert!(store.put_json(Family::Study, "x.json", &bad).is_err());
        assert!(store.get_bytes(Family::Study, "x.json").unwrap().is_none());
    }

    #[test]
    fn keys_cannot_escape_the_root() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        assert!(store.put_text(Family::Reports, "../x", "no").is_err());
        assert!(store.put_text(Family::Reports, "/etc/x", "no").is_err());
        store.put_text(Family::Reports, "run-1/a.csv", "ok").unwrap();
    }
}
