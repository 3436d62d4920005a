//! Persistence: content-addressed blobs plus one append-only event log per
//! session.
//!
//! Layout under the data directory:
//!
//! ```text
//! blobs/ab/cdef...        blob whose SHA-256 is abcdef...
//! sessions/<id>.jsonl     {seq, ts, type, payload, crc32} per line
//! ```

mod blob;
mod events;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

pub use blob::{BlobStore, ContentHash};
pub use events::{decode_line, encode_line, validate_session_id, EventLog, EventRecord, EventType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid content hash {0:?}")]
    InvalidHash(String),
    #[error("sequence conflict: expected version {expected}, log is at {actual}")]
    SequenceConflict { expected: u64, actual: u64 },
    #[error("corrupt log for session {session} at line {line}: {reason}")]
    CorruptLog { session: String, line: usize, reason: String },
    #[error("storage full at {0}")]
    StorageFull(String),
    #[error("I/O failure at {path}: {detail}")]
    Io { path: String, detail: String },
}

impl StoreError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::StorageFull {
            return Self::StorageFull(path.display().to_string());
        }
        Self::Io { path: path.display().to_string(), detail: e.to_string() }
    }
}

/// Blob store and session logs sharing one data directory.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    pub blobs: BlobStore,
    pub events: EventLog,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        Ok(Self { blobs: BlobStore::open(root.join("blobs"))?, events: EventLog::open(root.join("sessions"))?, root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Every blob hash mentioned anywhere in a session event payload.
    pub fn referenced_hashes(&self) -> Result<BTreeSet<ContentHash>, StoreError> {
        let mut out = BTreeSet::new();
        for id in self.events.list()? {
            for rec in self.events.load(&id)? {
                collect_hashes(&rec.payload, &mut out);
            }
        }
        Ok(out)
    }

    /// Deletes blobs no session references; returns what was (or, with
    /// `dry_run`, would be) removed. Never runs implicitly.
    pub fn gc(&self, dry_run: bool) -> Result<Vec<ContentHash>, StoreError> {
        let keep = self.referenced_hashes()?;
        let doomed: Vec<ContentHash> = self.blobs.list()?.into_iter().filter(|h| !keep.contains(h)).collect();
        if !dry_run {
            for h in &doomed {
                self.blobs.remove(h)?;
            }
        }
        Ok(doomed)
    }
}

fn collect_hashes(v: &Value, out: &mut BTreeSet<ContentHash>) {
    match v {
        Value::String(s) => {
            if let Ok(h) = ContentHash::parse(s) {
                out.insert(h);
            }
        }
        Value::Array(items) => items.iter().for_each(|i| collect_hashes(i, out)),
        Value::Object(map) => map.values().for_each(|i| collect_hashes(i, out)),
        _ => {}
    }
}

/// Serde adapter storing bytes as standard base64 strings.
pub mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn gc_keeps_referenced_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let kept = store.blobs.put(b"kept").unwrap();
        let orphan = store.blobs.put(b"orphan").unwrap();
        store.events.append("s", EventType::SessionCreated, json!({"sketch": kept}), None).unwrap();
        assert_eq!(store.gc(true).unwrap(), vec![orphan.clone()]);
        assert!(store.blobs.contains(&orphan));
        assert_eq!(store.gc(false).unwrap(), vec![orphan.clone()]);
        assert!(!store.blobs.contains(&orphan));
        assert!(store.blobs.contains(&kept));
    }
}
