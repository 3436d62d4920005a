use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Subcommand;
use draftforge_core::config::Config;
use draftforge_core::dataset::{self, BuildOptions, DatasetError, SourceManifest, Totals, MANIFEST_FILE};
use serde::Serialize;

use super::gateway;
use crate::errors::VALIDATION;
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Check that every sketch in a source manifest exists and decodes.
    Validate { source: PathBuf },
    /// Build a dataset from scratch into `--out`.
    Build {
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many records (the journal allows resuming).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Continue an interrupted build in `--out`.
    Resume {
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum BuildStatus {
    Complete,
    Interrupted,
}

#[derive(Debug, Serialize)]
struct BuildSummary {
    status: BuildStatus,
    out_dir: PathBuf,
    manifest: Option<PathBuf>,
    records: usize,
    totals: Option<Totals>,
}

fn build_output(result: Result<dataset::DatasetManifest, DatasetError>, out: PathBuf) -> anyhow::Result<Output> {
    let summary = match result {
        Ok(m) => BuildSummary {
            status: BuildStatus::Complete,
            manifest: Some(out.join(MANIFEST_FILE)),
            out_dir: out,
            records: m.records.len(),
            totals: Some(m.totals),
        },
        Err(DatasetError::Interrupted { completed }) => {
            BuildSummary { status: BuildStatus::Interrupted, manifest: None, out_dir: out, records: completed, totals: None }
        }
        Err(e) => return Err(e.into()),
    };
    let text = match &summary.totals {
        Some(t) => format!(
            "built {} records into {}: {} sketches, {} images, {} failed",
            summary.records,
            summary.out_dir.display(),
            t.sketch_count,
            t.image_count,
            t.failed_count
        ),
        None => format!("stopped after {} records; run `dataset resume` to finish", summary.records),
    };
    Output::new(&summary, text)
}

pub fn run(cfg: &Config, cmd: DatasetCmd) -> anyhow::Result<Output> {
    match cmd {
        DatasetCmd::Validate { source } => {
            let source = SourceManifest::load(&source)?;
            let report = dataset::validate(&source);
            let mut text = format!("{} entries, {} valid\n", report.entries, report.valid_count());
            for f in &report.failures {
                let _ = writeln!(text, "entry {} ({}): {}", f.index, f.path, f.reason);
            }
            let code = if report.is_ok() { 0 } else { VALIDATION };
            Ok(Output::new(&report, text)?.with_exit(code))
        }
        DatasetCmd::Build { source, out, stop_after } => {
            let source = SourceManifest::load(&source)?;
            let g = gateway(cfg)?;
            build_output(dataset::build(&g, &cfg.dataset, &source, &out, &BuildOptions { stop_after }), out)
        }
        DatasetCmd::Resume { source, out } => {
            let source = SourceManifest::load(&source)?;
            let g = gateway(cfg)?;
            build_output(dataset::resume(&g, &cfg.dataset, &source, &out, &BuildOptions::default()), out)
        }
    }
}
