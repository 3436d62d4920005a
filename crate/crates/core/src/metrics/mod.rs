//! Embedding similarity metrics: clamped-cosine scores, per-record
//! alignment between sketch, text and images, and pairwise diversity of
//! image sets with nearest-rank percentile exemplars.

mod alignment;
mod diversity;
mod embedding;
mod export;
mod score;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alignment::{alignment_report, alignment_row, AlignmentInput, AlignmentMeans, AlignmentReport, AlignmentRow};
pub use diversity::{
    diversity_distribution, histogram, nearest_rank, pairwise_diversity, percentile_exemplars, DiversityDistribution,
    DiversityHistogram, HistogramBin, ImageSet, PercentileExemplar, SetScore,
};
pub use embedding::{DeterministicEmbedder, EmbedError, Embedder, EmbeddingVector, NORM_TOLERANCE};
pub use export::{alignment_csv, diversity_csv};
pub use score::{clip_score, SimilarityScore};

use crate::Exec;

pub const DEFAULT_PERCENTILES: [f64; 3] = [5.0, 50.0, 95.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("need at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error("record {0} has no images")]
    NoImages(String),
    #[error("percentile {0} is outside [0, 100]")]
    InvalidPercentile(f64),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Unembedded alignment record.
#[derive(Debug, Clone)]
pub struct RawAlignmentRecord {
    pub record_id: String,
    pub sketch: Vec<u8>,
    pub text: String,
    pub images: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct RawImageSet {
    pub set_id: String,
    pub images: Vec<Vec<u8>>,
}

/// Embeds a corpus record by record; output order matches input order.
pub fn embed_alignment_corpus(
    embedder: &dyn Embedder,
    records: &[RawAlignmentRecord],
    exec: Exec,
) -> Result<Vec<AlignmentInput>, MetricsError> {
    exec.map(records, |r| {
        Ok(AlignmentInput {
            record_id: r.record_id.clone(),
            sketch: embedder.embed_image(&r.sketch)?,
            text: embedder.embed_text(&r.text)?,
            images: r.images.iter().map(|b| embedder.embed_image(b)).collect::<Result<_, _>>()?,
        })
    })
    .into_iter()
    .collect()
}

pub fn embed_image_sets(embedder: &dyn Embedder, sets: &[RawImageSet], exec: Exec) -> Result<Vec<ImageSet>, MetricsError> {
    exec.map(sets, |s| {
        Ok(ImageSet {
            set_id: s.set_id.clone(),
            embeddings: s.images.iter().map(|b| embedder.embed_image(b)).collect::<Result<_, EmbedError>>()?,
        })
    })
    .into_iter()
    .collect()
}

/// Parses a comma-separated percentile list such as `5,50,95`.
pub fn parse_percentiles(spec: &str) -> Result<Vec<f64>, MetricsError> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let p: f64 = s.parse().map_err(|_| MetricsError::InvalidPercentile(f64::NAN))?;
            if (0.0..=100.0).contains(&p) {
                Ok(p)
            } else {
                Err(MetricsError::InvalidPercentile(p))
            }
        })
        .collect()
}

/// JSON summary written next to the CSV rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySummary {
    pub set_count: usize,
    pub mean_score: f64,
    pub exemplars: Vec<PercentileExemplar>,
}

impl DiversitySummary {
    pub fn of(dist: &DiversityDistribution) -> Self {
        let n = dist.set_scores.len();
        let mean = if n == 0 { 0.0 } else { dist.set_scores.iter().map(|s| s.score).sum::<f64>() / n as f64 };
        Self { set_count: n, mean_score: mean, exemplars: dist.exemplars.clone() }
    }
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// Full diversity output: summary, per-set scores and dashboard bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub summary: DiversitySummary,
    pub set_scores: Vec<SetScore>,
    pub histogram: DiversityHistogram,
}

impl DiversityReport {
    pub fn new(dist: &DiversityDistribution, bins: usize) -> Self {
        Self { summary: DiversitySummary::of(dist), set_scores: dist.set_scores.clone(), histogram: histogram(dist, bins) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_parsing() {
        assert_eq!(parse_percentiles("5,50,95").unwrap(), vec![5.0, 50.0, 95.0]);
        assert_eq!(parse_percentiles(" 0, 100 ").unwrap(), vec![0.0, 100.0]);
        assert!(parse_percentiles("5,150").is_err());
        assert!(parse_percentiles("x").is_err());
    }
}
