use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    read_sketch, validate, DatasetError, DatasetManifest, DatasetRecord, RecordMetrics, RecordStatus, SourceManifest,
    JOURNAL_FILE, MANIFEST_FILE,
};
use crate::config::DatasetConfig;
use crate::gateway::{Gateway, GatewayError};
use crate::metrics::{clip_score, pairwise_diversity, EmbeddingVector};
use crate::store::{BlobStore, StoreError};

/// Retries a failed record gets across resumes, counting the first run.
const MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Process at most this many records, then stop with
    /// [`DatasetError::Interrupted`]. Used to exercise resumption.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalHeader {
    fingerprint: String,
    entries: usize,
    images_per_sketch: usize,
}

pub struct DatasetBuilder<'a> {
    gateway: &'a Gateway,
    cfg: &'a DatasetConfig,
}

impl<'a> DatasetBuilder<'a> {
    pub fn new(gateway: &'a Gateway, cfg: &'a DatasetConfig) -> Self {
        Self { gateway, cfg }
    }

    /// Fresh build; any previous journal in `out_dir` is discarded.
    pub fn build(&self, source: &SourceManifest, out_dir: &Path, opts: &BuildOptions) -> Result<DatasetManifest, DatasetError> {
        preflight(source)?;
        let blobs = open_output(out_dir)?;
        let journal_path = out_dir.join(JOURNAL_FILE);
        let mut file = File::create(&journal_path).map_err(|e| unwritable(&journal_path, e))?;
        let header = JournalHeader {
            fingerprint: source.fingerprint(),
            entries: source.entries.len(),
            images_per_sketch: source.images_per_sketch,
        };
        writeln!(file, "{}", serde_json::to_string(&header).expect("header serializes"))
            .map_err(|e| unwritable(&journal_path, e))?;
        file.sync_data().map_err(|e| unwritable(&journal_path, e))?;
        let todo: Vec<(usize, u32)> = (0..source.entries.len()).map(|i| (i, 1)).collect();
        let done = self.run(source, &blobs, file, &journal_path, &todo, opts)?;
        finish(source, out_dir, done.into_values().collect())
    }

    /// Continues a build from its journal.
    pub fn resume(&self, source: &SourceManifest, out_dir: &Path, opts: &BuildOptions) -> Result<DatasetManifest, DatasetError> {
        preflight(source)?;
        let journal_path = out_dir.join(JOURNAL_FILE);
        let (header, mut records) = read_journal(&journal_path)?;
        let actual = source.fingerprint();
        if header.fingerprint != actual {
            return Err(DatasetError::FingerprintMismatch { expected: header.fingerprint, actual });
        }
        let blobs = open_output(out_dir)?;
        let todo: Vec<(usize, u32)> = (0..source.entries.len())
            .filter_map(|i| match records.get(&i) {
                None => Some((i, 1)),
                Some(r) if !r.is_complete() && r.attempts < MAX_ATTEMPTS => Some((i, r.attempts + 1)),
                Some(_) => None,
            })
            .collect();
        tracing::info!(pending = todo.len(), journaled = records.len(), "resuming dataset build");
        let file = OpenOptions::new().append(true).open(&journal_path).map_err(|e| unwritable(&journal_path, e))?;
        records.extend(self.run(source, &blobs, file, &journal_path, &todo, opts)?);
        finish(source, out_dir, records.into_values().collect())
    }

    fn run(
        &self,
        source: &SourceManifest,
        blobs: &BlobStore,
        file: File,
        journal_path: &Path,
        todo: &[(usize, u32)],
        opts: &BuildOptions,
    ) -> Result<BTreeMap<usize, DatasetRecord>, DatasetError> {
        let journal = Mutex::new(file);
        let started = AtomicUsize::new(0);
        let results = self.cfg.exec.map_bounded(
            self.cfg.workers.max(1),
            todo,
            |&(index, attempts)| -> Result<Option<DatasetRecord>, DatasetError> {
                if let Some(limit) = opts.stop_after {
                    if started.fetch_add(1, Ordering::SeqCst) >= limit {
                        return Ok(None);
                    }
                }
                let record = self.record(source, blobs, index, attempts)?;
                let line = serde_json::to_string(&record).expect("record serializes");
                let mut f = journal.lock().unwrap_or_else(|p| p.into_inner());
                writeln!(f, "{line}").and_then(|_| f.sync_data()).map_err(|e| StoreError::io(journal_path, e))?;
                Ok(Some(record))
            },
        );
        let mut done = BTreeMap::new();
        let mut skipped = false;
        for r in results {
            match r? {
                Some(rec) => {
                    done.insert(rec.index, rec);
                }
                None => skipped = true,
            }
        }
        if skipped {
            return Err(DatasetError::Interrupted { completed: done.len() });
        }
        Ok(done)
    }

    /// One sketch: describe, generate, store, score. Provider failures
    /// become a failed record; storage failures abort the build.
    fn record(
        &self,
        source: &SourceManifest,
        blobs: &BlobStore,
        index: usize,
        attempts: u32,
    ) -> Result<DatasetRecord, DatasetError> {
        let entry = &source.entries[index];
        let mut rec = DatasetRecord {
            index,
            sketch_path: entry.sketch.display().to_string(),
            sketch: None,
            description: None,
            generation_prompt: None,
            images: Vec::new(),
            metrics: None,
            status: RecordStatus::Complete,
            attempts,
        };
        let fail = |mut rec: DatasetRecord, kind: &str, detail: String| {
            tracing::warn!(index, kind, %detail, "dataset record failed");
            rec.status = RecordStatus::Failed { kind: kind.to_owned(), detail };
            Ok(rec)
        };
        let sketch = match read_sketch(source, entry) {
            Ok(b) => b,
            Err(detail) => return fail(rec, "invalid_sketch", detail),
        };
        rec.sketch = Some(blobs.put(&sketch)?);
        let described = match self.gateway.describe(&sketch, entry.description.as_deref().unwrap_or("")) {
            Ok(d) => d,
            Err(e) => return fail(rec, gateway_kind(&e), e.to_string()),
        };
        let prompt = self
            .cfg
            .prompt_template
            .replace("{generation_prompt}", &described.generation_prompt)
            .replace("{description}", &described.description);
        rec.description = Some(described.description);
        rec.generation_prompt = Some(prompt.clone());
        let images = match self.gateway.text_to_images(&prompt, source.images_per_sketch) {
            Ok(i) => i,
            Err(e) => return fail(rec, gateway_kind(&e), e.to_string()),
        };
        for img in &images {
            rec.images.push(blobs.put(&img.bytes)?);
        }
        let text = rec.description.as_deref().expect("set above");
        match self.metrics(&sketch, text, &images.iter().map(|i| i.bytes.as_slice()).collect::<Vec<_>>()) {
            Ok(m) => rec.metrics = Some(m),
            Err(e) => return fail(rec, gateway_kind(&e), e.to_string()),
        }
        Ok(rec)
    }

    fn metrics(&self, sketch: &[u8], text: &str, images: &[&[u8]]) -> Result<RecordMetrics, GatewayError> {
        let sketch_emb = self.gateway.embed_image(sketch)?;
        let text_emb = self.gateway.embed_text(text)?;
        let embs: Vec<EmbeddingVector> = images.iter().map(|b| self.gateway.embed_image(b)).collect::<Result<_, _>>()?;
        let mean = |other: &EmbeddingVector| -> Result<f64, GatewayError> {
            let mut sum = 0.0;
            for e in &embs {
                sum += clip_score(e, other)?.value();
            }
            Ok(sum / embs.len() as f64)
        };
        Ok(RecordMetrics {
            image_text_mean: mean(&text_emb)?,
            sketch_image_mean: mean(&sketch_emb)?,
            pairwise_diversity: pairwise_diversity(&embs).ok().map(|s| s.value()),
        })
    }
}

pub fn build(
    gateway: &Gateway,
    cfg: &DatasetConfig,
    source: &SourceManifest,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<DatasetManifest, DatasetError> {
    DatasetBuilder::new(gateway, cfg).build(source, out_dir, opts)
}

pub fn resume(
    gateway: &Gateway,
    cfg: &DatasetConfig,
    source: &SourceManifest,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<DatasetManifest, DatasetError> {
    DatasetBuilder::new(gateway, cfg).resume(source, out_dir, opts)
}

fn gateway_kind(e: &GatewayError) -> &'static str {
    match e {
        GatewayError::Provider(p) => p.kind.as_str(),
        GatewayError::InvalidInput(_) => "InvalidInput",
        GatewayError::UnsupportedImage(_) => "UnsupportedImage",
        GatewayError::UnknownBackend(_) => "UnknownBackend",
    }
}

fn preflight(source: &SourceManifest) -> Result<(), DatasetError> {
    let report = validate(source);
    if report.empty_manifest {
        return Err(DatasetError::EmptyManifest);
    }
    if report.valid_count() == 0 {
        return Err(DatasetError::NoValidEntries);
    }
    if source.images_per_sketch == 0 {
        return Err(DatasetError::Source { path: "<manifest>".into(), detail: "images_per_sketch must be at least 1".into() });
    }
    Ok(())
}

fn unwritable(path: &Path, e: std::io::Error) -> DatasetError {
    DatasetError::OutputDirUnwritable(format!("{}: {e}", path.display()))
}

fn open_output(out_dir: &Path) -> Result<BlobStore, DatasetError> {
    std::fs::create_dir_all(out_dir).map_err(|e| unwritable(out_dir, e))?;
    BlobStore::open(out_dir.join("blobs")).map_err(|e| DatasetError::OutputDirUnwritable(e.to_string()))
}

/// Header plus the latest record per index. A torn final line is ignored.
fn read_journal(path: &Path) -> Result<(JournalHeader, BTreeMap<usize, DatasetRecord>), DatasetError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(DatasetError::NoJournal(path.display().to_string())),
        Err(e) => return Err(StoreError::io(path, e).into()),
    };
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    let complete_tail = text.ends_with('\n');
    let header_line = lines.first().ok_or_else(|| DatasetError::NoJournal(path.display().to_string()))?;
    let header: JournalHeader =
        serde_json::from_str(header_line).map_err(|e| DatasetError::CorruptJournal { line: 1, detail: e.to_string() })?;
    let mut records = BTreeMap::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        match serde_json::from_str::<DatasetRecord>(line) {
            Ok(r) => {
                records.insert(r.index, r);
            }
            Err(_) if i == lines.len() - 1 && !complete_tail => {
                tracing::warn!(line = i + 1, "ignoring torn journal tail");
            }
            Err(e) => return Err(DatasetError::CorruptJournal { line: i + 1, detail: e.to_string() }),
        }
    }
    Ok((header, records))
}

fn finish(source: &SourceManifest, out_dir: &Path, records: Vec<DatasetRecord>) -> Result<DatasetManifest, DatasetError> {
    let manifest = DatasetManifest::new(source, records);
    write_atomic(&out_dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    tracing::info!(
        sketches = manifest.totals.sketch_count,
        images = manifest.totals.image_count,
        failed = manifest.totals.failed_count,
        "dataset manifest written"
    );
    Ok(manifest)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp: PathBuf = path.with_extension("json.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| unwritable(path, e))
}
