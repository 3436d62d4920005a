//! Input files:
//!
//! - alignment corpus: `{"records": [{"record_id", "sketch", "text", "images": [...]}]}`
//! - image sets: `{"sets": [{"set_id", "images": [...]}]}` or a bare array
//!
//! Image entries are file paths relative to the input file. A dataset
//! `manifest.json` is accepted for both; its blobs are read from the
//! `blobs/` directory next to it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Subcommand;
use draftforge_core::config::Config;
use draftforge_core::dataset::DatasetManifest;
use draftforge_core::metrics::{
    alignment_csv, alignment_report, diversity_csv, diversity_distribution, embed_alignment_corpus, embed_image_sets,
    parse_percentiles, DiversityReport, RawAlignmentRecord, RawImageSet, DEFAULT_HISTOGRAM_BINS,
};
use draftforge_core::store::BlobStore;
use serde::Deserialize;

use super::{gateway, read_json, resolve, write_file};
use crate::errors::{invalid, read_input};
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    /// Sketch/text/image similarity per record plus corpus means.
    Alignment {
        corpus: PathBuf,
        /// Also write per-record rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Pairwise similarity within each image set, with percentile exemplars.
    Diversity {
        sets: PathBuf,
        /// Comma-separated percentiles in [0, 100].
        #[arg(long, default_value = "5,50,95")]
        percentiles: String,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
        /// Also write per-set scores as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Deserialize)]
struct CorpusRecord {
    record_id: String,
    sketch: PathBuf,
    text: String,
    images: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct Corpus {
    records: Vec<CorpusRecord>,
}

#[derive(Debug, Deserialize)]
struct SetEntry {
    set_id: String,
    images: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SetsFile {
    Wrapped { sets: Vec<SetEntry> },
    Bare(Vec<SetEntry>),
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn is_manifest(path: &Path) -> anyhow::Result<Option<DatasetManifest>> {
    let v: serde_json::Value = read_json(path)?;
    if v.get("source_fingerprint").is_none() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_value(v).map_err(|e| invalid(format!("{}: {e}", path.display())))?))
}

fn manifest_blobs(path: &Path) -> anyhow::Result<BlobStore> {
    Ok(BlobStore::open(base_dir(path).join("blobs"))?)
}

fn load_corpus(path: &Path) -> anyhow::Result<Vec<RawAlignmentRecord>> {
    if let Some(m) = is_manifest(path)? {
        let blobs = manifest_blobs(path)?;
        return m
            .records
            .iter()
            .filter(|r| r.is_complete())
            .map(|r| {
                let sketch = r.sketch.as_ref().ok_or_else(|| invalid(format!("record {} has no sketch", r.index)))?;
                Ok(RawAlignmentRecord {
                    record_id: format!("{:05}", r.index),
                    sketch: blobs.get(sketch)?,
                    text: r.description.clone().unwrap_or_default(),
                    images: r.images.iter().map(|h| blobs.get(h)).collect::<Result<_, _>>()?,
                })
            })
            .collect();
    }
    let base = base_dir(path);
    let corpus: Corpus = read_json(path)?;
    corpus
        .records
        .into_iter()
        .map(|r| {
            Ok(RawAlignmentRecord {
                record_id: r.record_id,
                sketch: read_input(&resolve(&base, &r.sketch))?,
                text: r.text,
                images: r.images.iter().map(|p| read_input(&resolve(&base, p))).collect::<anyhow::Result<_>>()?,
            })
        })
        .collect()
}

fn load_sets(path: &Path) -> anyhow::Result<Vec<RawImageSet>> {
    if let Some(m) = is_manifest(path)? {
        let blobs = manifest_blobs(path)?;
        return m
            .records
            .iter()
            .filter(|r| r.is_complete())
            .map(|r| {
                Ok(RawImageSet {
                    set_id: format!("{:05}", r.index),
                    images: r.images.iter().map(|h| blobs.get(h)).collect::<Result<_, _>>()?,
                })
            })
            .collect();
    }
    let base = base_dir(path);
    let sets = match read_json::<SetsFile>(path)? {
        SetsFile::Wrapped { sets } | SetsFile::Bare(sets) => sets,
    };
    sets.into_iter()
        .map(|s| {
            Ok(RawImageSet {
                set_id: s.set_id,
                images: s.images.iter().map(|p| read_input(&resolve(&base, p))).collect::<anyhow::Result<_>>()?,
            })
        })
        .collect()
}

pub fn run(cfg: &Config, cmd: MetricsCmd) -> anyhow::Result<Output> {
    let g = gateway(cfg)?;
    let exec = cfg.pipeline.exec;
    match cmd {
        MetricsCmd::Alignment { corpus, csv } => {
            let raw = load_corpus(&corpus)?;
            let inputs = embed_alignment_corpus(g.embedder(), &raw, exec)?;
            let report = alignment_report(&inputs, exec)?;
            if let Some(path) = csv {
                write_file(&path, alignment_csv(&report).as_bytes())?;
            }
            let m = &report.means;
            let text = format!(
                "{} records\nsketch-text {:.2}\nimage-text  {:.2}\nsketch-image {:.2}",
                report.rows.len(),
                m.sketch_text,
                m.image_text,
                m.sketch_image
            );
            Output::new(&report, text)
        }
        MetricsCmd::Diversity { sets, percentiles, bins, csv } => {
            let percentiles = parse_percentiles(&percentiles)?;
            let raw = load_sets(&sets)?;
            let embedded = embed_image_sets(g.embedder(), &raw, exec)?;
            let dist = diversity_distribution(&embedded, &percentiles, exec)?;
            if let Some(path) = csv {
                write_file(&path, diversity_csv(&dist).as_bytes())?;
            }
            let report = DiversityReport::new(&dist, bins);
            let mut text =
                format!("{} sets, mean pairwise similarity {:.2}\n", report.summary.set_count, report.summary.mean_score);
            for e in &report.summary.exemplars {
                let _ = writeln!(text, "p{:<5} rank {:>4}  {:<20} {:.2}", e.percentile, e.rank, e.set_id, e.score);
            }
            Output::new(&report, text)
        }
    }
}
