use serde::{Deserialize, Serialize};

use super::score::{clip_score, SimilarityScore};
use super::{EmbeddingVector, MetricsError};
use crate::Exec;

/// Mean [`clip_score`] over all unordered pairs. Lower means more diverse.
pub fn pairwise_diversity(images: &[EmbeddingVector]) -> Result<SimilarityScore, MetricsError> {
    let n = images.len();
    if n < 2 {
        return Err(MetricsError::TooFewImages(n));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += clip_score(&images[i], &images[j])?.value();
        }
    }
    Ok(SimilarityScore::new(sum / (n * (n - 1) / 2) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSet {
    pub set_id: String,
    pub embeddings: Vec<EmbeddingVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetScore {
    pub set_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileExemplar {
    pub percentile: f64,
    pub rank: usize,
    pub set_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityDistribution {
    /// One entry per image set, in input order.
    pub set_scores: Vec<SetScore>,
    pub exemplars: Vec<PercentileExemplar>,
}

/// 1-based nearest rank `⌈p/100 · n⌉`, at least 1.
///
/// `p · n / 100` is snapped to the nearest integer when within 1e-9 of it,
/// so 50% of 10 is rank 5 rather than 6 after rounding noise.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64 / 100.0;
    let r = x.round();
    let rank = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (rank as usize).clamp(1, n.max(1))
}

/// Picks, for each requested percentile, the set sitting at the
/// nearest-rank position of the scores sorted ascending (ties broken by
/// set id).
pub fn percentile_exemplars(scores: &[SetScore], percentiles: &[f64]) -> Result<DiversityDistribution, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if let Some(&p) = percentiles.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(MetricsError::InvalidPercentile(p));
    }
    let mut sorted: Vec<&SetScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.set_id.cmp(&b.set_id)));
    let exemplars = percentiles
        .iter()
        .map(|&p| {
            let rank = nearest_rank(p, sorted.len());
            let s = sorted[rank - 1];
            PercentileExemplar { percentile: p, rank, set_id: s.set_id.clone(), score: s.score }
        })
        .collect();
    Ok(DiversityDistribution { set_scores: scores.to_vec(), exemplars })
}

/// Scores every set (in parallel under [`Exec::Parallel`]) and picks the
/// percentile exemplars.
pub fn diversity_distribution(sets: &[ImageSet], percentiles: &[f64], exec: Exec) -> Result<DiversityDistribution, MetricsError> {
    let scored = exec.map(sets, |s| {
        pairwise_diversity(&s.embeddings).map(|score| SetScore { set_id: s.set_id.clone(), score: score.value() })
    });
    let scores = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
    percentile_exemplars(&scores, percentiles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Histogram payload for the diversity dashboard: equal-width bins over
/// [0, 100] plus the percentile markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityHistogram {
    pub bins: Vec<HistogramBin>,
    pub markers: Vec<PercentileExemplar>,
}

/// Equal-width bins over [0, 100]; the last bin includes 100.
pub fn histogram(dist: &DiversityDistribution, bin_count: usize) -> DiversityHistogram {
    let bin_count = bin_count.max(1);
    let width = 100.0 / bin_count as f64;
    let mut bins: Vec<HistogramBin> =
        (0..bin_count).map(|i| HistogramBin { lower: i as f64 * width, upper: (i + 1) as f64 * width, count: 0 }).collect();
    for s in &dist.set_scores {
        let idx = ((s.score / width).floor() as usize).min(bin_count - 1);
        bins[idx].count += 1;
    }
    let mut markers = dist.exemplars.clone();
    markers.sort_by(|a, b| a.percentile.total_cmp(&b.percentile));
    DiversityHistogram { bins, markers }
}
