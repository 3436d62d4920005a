use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::ProviderError;
use crate::imaging;

/// Norm tolerance for vectors flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("text is empty")]
    EmptyText,
    #[error("unsupported image: {0}")]
    UnsupportedImage(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector is not unit length")]
    NotNormalized,
    #[error("cannot normalize a zero or non-finite vector")]
    Degenerate,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self { values, normalized: false }
    }

    /// L2-normalizes `values`.
    pub fn unit(values: Vec<f64>) -> Result<Self, EmbedError> {
        Self::raw(values).normalize()
    }

    pub fn normalize(self) -> Result<Self, EmbedError> {
        let n = l2(&self.values);
        if !(n > 0.0 && n.is_finite()) {
            return Err(EmbedError::Degenerate);
        }
        Ok(Self { values: self.values.into_iter().map(|v| v / n).collect(), normalized: true })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    /// True when flagged normalized and the norm is within tolerance.
    pub fn is_unit(&self) -> bool {
        self.normalized && (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maps images and text into one shared vector space.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, EmbedError>;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Semantics-free embedder for offline runs.
///
/// Images become a 64-bin intensity histogram of a 64×64 box-downsampled
/// grayscale copy; text becomes signed feature hashing of lowercase
/// unigrams and bigrams into the same 64 dimensions. Both are L2
/// normalized. Only integer arithmetic precedes normalization, so output
/// is identical on every platform.
#[derive(Debug, Default, Clone, Copy)]
pub struct DeterministicEmbedder;

impl DeterministicEmbedder {
    pub const DIM: usize = 64;
}

fn hashed_feature(feature: &str) -> (usize, f64) {
    let digest = Sha256::digest(feature.as_bytes());
    let bucket = u16::from_le_bytes([digest[0], digest[1]]) as usize % DeterministicEmbedder::DIM;
    let sign = if digest[2] & 1 == 0 { 1.0 } else { -1.0 };
    let weight = 1.0 + (digest[3] as f64) / 255.0;
    (bucket, sign * weight)
}

impl Embedder for DeterministicEmbedder {
    fn dimension(&self) -> usize {
        Self::DIM
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, EmbedError> {
        let img = imaging::decode(bytes).map_err(|e| EmbedError::UnsupportedImage(e.0))?;
        let small = imaging::box_downsample(&img.to_luma8(), 64);
        let mut hist = [0u64; Self::DIM];
        for v in small {
            hist[(v >> 2) as usize] += 1;
        }
        EmbeddingVector::unit(hist.iter().map(|&c| c as f64).collect())
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
        let mut features: Vec<String> = tokens.iter().map(|t| format!("u:{t}")).collect();
        features.extend(tokens.windows(2).map(|w| format!("b:{} {}", w[0], w[1])));
        if features.is_empty() {
            features.push(format!("s:{lower}"));
        }
        let mut values = vec![0.0; Self::DIM];
        for f in &features {
            let (bucket, w) = hashed_feature(f);
            values[bucket] += w;
        }
        match EmbeddingVector::unit(values) {
            Err(EmbedError::Degenerate) => {
                // Features cancelled exactly; fall back to the whole string.
                let (bucket, _) = hashed_feature(&format!("s:{lower}"));
                let mut v = vec![0.0; Self::DIM];
                v[bucket] = 1.0;
                EmbeddingVector::unit(v)
            }
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn solid(v: u8) -> Vec<u8> {
        imaging::encode_png(&RgbImage::from_pixel(80, 80, Rgb([v, v, v])), &[])
    }

    #[test]
    fn image_embedding_is_unit_and_deterministic() {
        let e = DeterministicEmbedder;
        let a = e.embed_image(&solid(10)).unwrap();
        assert!(a.is_unit());
        assert_eq!(a, e.embed_image(&solid(10)).unwrap());
        assert_ne!(a, e.embed_image(&solid(250)).unwrap());
    }

    #[test]
    fn truncated_image_rejected() {
        let bytes = solid(10);
        assert!(matches!(DeterministicEmbedder.embed_image(&bytes[..bytes.len() / 2]), Err(EmbedError::UnsupportedImage(_))));
    }

    #[test]
    fn text_embedding() {
        let e = DeterministicEmbedder;
        assert_eq!(e.embed_text(""), Err(EmbedError::EmptyText));
        assert_eq!(e.embed_text("   "), Err(EmbedError::EmptyText));
        let a = e.embed_text("A whisk with a wooden handle").unwrap();
        assert!(a.is_unit());
        assert_eq!(a.dim(), 64);
        assert_eq!(a, e.embed_text("a whisk WITH a wooden handle").unwrap());
        assert!(e.embed_text("!!!").unwrap().is_unit());
    }

    #[test]
    fn normalize_rejects_zero() {
        assert_eq!(EmbeddingVector::unit(vec![0.0; 4]), Err(EmbedError::Degenerate));
    }
}
