//! Batch conversion of a sketch corpus into description + image records.
//!
//! Output directory layout:
//!
//! ```text
//! blobs/          content-addressed sketches and images
//! journal.jsonl   header line, then one line per finished record
//! manifest.json   final manifest, written atomically
//! ```
//!
//! The journal makes builds resumable: a resumed run skips records whose
//! latest journal line is complete, retries failed ones once, and writes
//! the same manifest an uninterrupted run would have written.

mod builder;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::{ContentHash, StoreError};

pub use builder::{build, resume, BuildOptions, DatasetBuilder};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("source manifest has no entries")]
    EmptyManifest,
    #[error("no source entry passed validation")]
    NoValidEntries,
    #[error("output directory {0} is not writable")]
    OutputDirUnwritable(String),
    #[error("source fingerprint {actual} does not match journal fingerprint {expected}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("no journal in {0}")]
    NoJournal(String),
    #[error("build interrupted after {completed} records")]
    Interrupted { completed: usize },
    #[error("cannot read source manifest {path}: {detail}")]
    Source { path: String, detail: String },
    #[error("corrupt journal line {line}: {detail}")]
    CorruptJournal { line: usize, detail: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    /// Relative paths resolve against the manifest's directory.
    pub sketch: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

fn default_images_per_sketch() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceManifest {
    pub entries: Vec<SourceEntry>,
    #[serde(default = "default_images_per_sketch")]
    pub images_per_sketch: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative sketch paths are resolved against; not part of
    /// the fingerprint.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SourceManifest {
    pub fn new(entries: Vec<SourceEntry>, images_per_sketch: usize, seed: u64) -> Self {
        Self { entries, images_per_sketch, seed, base_dir: PathBuf::new() }
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let mut m: Self =
            serde_json::from_str(text).map_err(|e| DatasetError::Source { path: "<inline>".into(), detail: e.to_string() })?;
        m.base_dir = base_dir.into();
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let source = |e: &dyn std::fmt::Display| DatasetError::Source { path: path.display().to_string(), detail: e.to_string() };
        let text = std::fs::read_to_string(path).map_err(|e| source(&e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| source(&e))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, entry: &SourceEntry) -> PathBuf {
        if entry.sketch.is_absolute() {
            entry.sketch.clone()
        } else {
            self.base_dir.join(&entry.sketch)
        }
    }

    /// SHA-256 of the canonical JSON form (entries, images_per_sketch, seed).
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub index: usize,
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: usize,
    /// Set when the manifest has no entries at all.
    pub empty_manifest: bool,
    pub failures: Vec<EntryFailure>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        !self.empty_manifest && self.failures.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.entries - self.failures.len()
    }
}

/// Checks that every sketch exists and decodes. No side effects.
pub fn validate(source: &SourceManifest) -> ValidationReport {
    let mut failures = Vec::new();
    for (index, entry) in source.entries.iter().enumerate() {
        if let Err(reason) = read_sketch(source, entry) {
            failures.push(EntryFailure { index, path: entry.sketch.display().to_string(), reason });
        }
    }
    ValidationReport { entries: source.entries.len(), empty_manifest: source.entries.is_empty(), failures }
}

pub(crate) fn read_sketch(source: &SourceManifest, entry: &SourceEntry) -> Result<Vec<u8>, String> {
    let bytes = std::fs::read(source.resolve(entry)).map_err(|e| e.to_string())?;
    crate::imaging::decode(&bytes).map_err(|e| e.to_string())?;
    Ok(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub image_text_mean: f64,
    pub sketch_image_mean: f64,
    /// Mean pairwise image similarity; `None` with fewer than two images.
    pub pairwise_diversity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordStatus {
    Complete,
    Failed { kind: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub index: usize,
    pub sketch_path: String,
    pub sketch: Option<ContentHash>,
    pub description: Option<String>,
    pub generation_prompt: Option<String>,
    pub images: Vec<ContentHash>,
    pub metrics: Option<RecordMetrics>,
    #[serde(flatten)]
    pub status: RecordStatus,
    pub attempts: u32,
}

impl DatasetRecord {
    pub fn is_complete(&self) -> bool {
        self.status == RecordStatus::Complete
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    /// Complete records.
    pub sketch_count: usize,
    pub image_count: usize,
    pub failed_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_fingerprint: String,
    pub images_per_sketch: usize,
    pub seed: u64,
    pub records: Vec<DatasetRecord>,
    pub totals: Totals,
}

impl DatasetManifest {
    pub fn new(source: &SourceManifest, mut records: Vec<DatasetRecord>) -> Self {
        records.sort_by_key(|r| r.index);
        let sketch_count = records.iter().filter(|r| r.is_complete()).count();
        let totals = Totals {
            sketch_count,
            image_count: sketch_count * source.images_per_sketch,
            failed_count: records.len() - sketch_count,
        };
        Self {
            source_fingerprint: source.fingerprint(),
            images_per_sketch: source.images_per_sketch,
            seed: source.seed,
            records,
            totals,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let source = |e: &dyn std::fmt::Display| DatasetError::Source { path: path.display().to_string(), detail: e.to_string() };
        let text = std::fs::read_to_string(path).map_err(|e| source(&e))?;
        serde_json::from_str(&text).map_err(|e| source(&e))
    }
}
