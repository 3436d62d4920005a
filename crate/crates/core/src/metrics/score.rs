use serde::{Deserialize, Serialize};

use super::embedding::{EmbedError, EmbeddingVector};

/// Similarity on the 0..=100 scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const MAX: SimilarityScore = SimilarityScore(100.0);

    /// Clamps into [0, 100]; NaN maps to 0.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(0.0, 100.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `100 · max(0, cos(a, b))` for unit vectors.
///
/// The cosine is taken as `1 − ‖a − b‖² / 2`, which for unit vectors is the
/// dot product, but is exactly 1 when `a == b` and bitwise symmetric in its
/// arguments.
pub fn clip_score(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<SimilarityScore, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    if !a.is_unit() || !b.is_unit() {
        return Err(EmbedError::NotNormalized);
    }
    let dist2: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    let cos = 1.0 - dist2 / 2.0;
    Ok(SimilarityScore::new(100.0 * cos.clamp(0.0, 1.0)))
}
