use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Subcommand;
use draftforge_core::config::Config;
use draftforge_core::pipeline::{run_route, ComparisonRecord, Route, RouteOptions};

use super::{exports_dir, pipeline, repair_plan, write_file};
use crate::errors::{read_input, PROVIDER};
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum RouteCmd {
    /// Run one route end to end and print its comparison record.
    Run {
        sketch: PathBuf,
        /// full, sketch-direct or sketch-guided.
        #[arg(long)]
        route: Route,
        #[arg(long, default_value = "")]
        note: String,
        /// Prompt for sketch-guided generation.
        #[arg(long, default_value = "")]
        guided_prompt: String,
        #[arg(long)]
        count: Option<usize>,
        /// Backend to run; repeat for several. Default: all configured.
        #[arg(long = "backend")]
        backends: Vec<String>,
        /// Repair plan JSON for the full route.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Where to copy the exported STL (full route only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// True when the route's main artifact is missing because a provider failed.
fn provider_failed(rec: &ComparisonRecord) -> bool {
    let produced = match rec.route {
        Route::Full => rec.exported_stl.is_some(),
        Route::SketchDirect | Route::SketchGuided => !rec.meshes.is_empty(),
    };
    !produced && !rec.failures.is_empty()
}

fn text(rec: &ComparisonRecord, stl: Option<&PathBuf>) -> String {
    let mut t = format!(
        "route {}: {} images, {} meshes, {} failures\n",
        rec.route,
        rec.images.len(),
        rec.meshes.len(),
        rec.failures.len()
    );
    if let Some(d) = rec.image_diversity {
        let _ = writeln!(t, "image diversity (mean pairwise similarity): {d:.3}");
    }
    if let Some(s) = rec.mean_similarity_to_sketch {
        let _ = writeln!(t, "mean similarity to sketch: {s:.3}");
    }
    for m in &rec.meshes {
        let _ = writeln!(t, "mesh {} from {:?}: printable={}", m.backend, m.image_index, m.report.printable);
    }
    for f in &rec.failures {
        let _ = writeln!(t, "failure at {}: {} ({})", f.step, f.kind, f.detail);
    }
    if let Some(id) = &rec.session_id {
        let _ = writeln!(t, "session {id}");
    }
    if let (Some(path), Some(r)) = (stl, &rec.final_report) {
        let _ = writeln!(t, "exported {} (printable={})", path.display(), r.printable);
    }
    t
}

pub fn run(cfg: &Config, cmd: RouteCmd) -> anyhow::Result<Output> {
    let RouteCmd::Run { sketch, route, note, guided_prompt, count, backends, plan, out } = cmd;
    let p = pipeline(cfg)?;
    let bytes = read_input(&sketch)?;
    let opts = RouteOptions {
        count: count.unwrap_or(cfg.pipeline.default_image_count),
        backends,
        guided_prompt,
        user_note: note,
        plan: repair_plan(cfg, plan.as_deref())?,
    };
    let rec = run_route(&p, &bytes, route, &opts)?;
    let stl_path = match (&rec.exported_stl, &rec.session_id) {
        (Some(hash), Some(id)) => {
            let path = out.unwrap_or_else(|| exports_dir(cfg, id).join(format!("{id}.stl")));
            write_file(&path, &p.store().blobs.get(hash)?)?;
            Some(path)
        }
        _ => None,
    };
    let code = if provider_failed(&rec) { PROVIDER } else { 0 };
    Ok(Output::new(&rec, text(&rec, stl_path.as_ref()))?.with_exit(code))
}
