use super::{AlignmentReport, DiversityDistribution};

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory csv writer cannot fail");
    String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8")
}

/// One row per record: `record_id,sketch_text,image_text,sketch_image`.
pub fn alignment_csv(report: &AlignmentReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        w.serialize(row).expect("in-memory csv writer cannot fail");
    }
    finish(w)
}

/// One row per image set: `set_id,score`.
pub fn diversity_csv(dist: &DiversityDistribution) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &dist.set_scores {
        w.serialize(s).expect("in-memory csv writer cannot fail");
    }
    finish(w)
}
