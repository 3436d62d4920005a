use serde::{Deserialize, Serialize};

use super::score::clip_score;
use super::{EmbeddingVector, MetricsError};
use crate::Exec;

/// Embedded form of one corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInput {
    pub record_id: String,
    pub sketch: EmbeddingVector,
    pub text: EmbeddingVector,
    pub images: Vec<EmbeddingVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub record_id: String,
    pub sketch_text: f64,
    /// Mean over the record's images.
    pub image_text: f64,
    /// Mean over the record's images.
    pub sketch_image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMeans {
    pub sketch_text: f64,
    pub image_text: f64,
    pub sketch_image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
    pub means: AlignmentMeans,
}

pub fn alignment_row(input: &AlignmentInput) -> Result<AlignmentRow, MetricsError> {
    if input.images.is_empty() {
        return Err(MetricsError::NoImages(input.record_id.clone()));
    }
    let n = input.images.len() as f64;
    let mut image_text = 0.0;
    let mut sketch_image = 0.0;
    for img in &input.images {
        image_text += clip_score(img, &input.text)?.value();
        sketch_image += clip_score(&input.sketch, img)?.value();
    }
    Ok(AlignmentRow {
        record_id: input.record_id.clone(),
        sketch_text: clip_score(&input.sketch, &input.text)?.value(),
        image_text: image_text / n,
        sketch_image: sketch_image / n,
    })
}

/// Rows keep input order regardless of `exec`.
pub fn alignment_report(corpus: &[AlignmentInput], exec: Exec) -> Result<AlignmentReport, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let rows = exec.map(corpus, alignment_row).into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = rows.len() as f64;
    let means = AlignmentMeans {
        sketch_text: rows.iter().map(|r| r.sketch_text).sum::<f64>() / n,
        image_text: rows.iter().map(|r| r.image_text).sum::<f64>() / n,
        sketch_image: rows.iter().map(|r| r.sketch_image).sum::<f64>() / n,
    };
    Ok(AlignmentReport { rows, means })
}
