use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Subcommand;
use draftforge_core::config::Config;
use draftforge_core::mesh::{self, ManufacturabilityReport};
use draftforge_core::pipeline::{BackendFailure, CandidateImage, DesignSession, Pipeline, Stage};
use draftforge_core::store::ContentHash;
use serde::Serialize;

use super::{exports_dir, pipeline, repair_plan, write_file};
use crate::errors::{invalid, read_input};
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum SessionCmd {
    /// Start a session from a sketch image.
    New {
        sketch: PathBuf,
        #[arg(long, default_value = "")]
        note: String,
    },
    /// Print the current session state.
    Show { id: String },
    /// Describe the sketch and derive a generation prompt.
    Describe { id: String },
    /// Replace the description with edited text.
    Edit { id: String, text: String },
    /// Generate candidate images from the current prompt.
    Images {
        id: String,
        #[arg(long)]
        count: Option<usize>,
        /// Directory for the image files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append a sentence to the prompt and regenerate images.
    Feedback {
        id: String,
        text: String,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose the image to mesh.
    SelectImage {
        id: String,
        /// 0-based image index.
        index: usize,
        /// Indices of images containing text, e.g. `0,2`.
        #[arg(long, value_delimiter = ',')]
        text_flags: Option<Vec<usize>>,
    },
    /// Generate mesh candidates from the selected image.
    Mesh {
        id: String,
        /// Backend to run; repeat for several. Default: all configured.
        #[arg(long = "backend")]
        backends: Vec<String>,
    },
    /// Choose the mesh to repair.
    SelectMesh { id: String, index: usize },
    /// Repair the selected mesh.
    Postprocess {
        id: String,
        /// Repair plan JSON; default is the configured plan.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Write the repaired mesh as binary STL.
    Export {
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Serialize)]
struct SessionSummary {
    id: String,
    stage: Stage,
    version: u64,
    iteration: Option<u32>,
    prompt: Option<String>,
    image_count: usize,
    selected_image: Option<usize>,
    mesh_count: usize,
    selected_mesh: Option<usize>,
    export: Option<ContentHash>,
}

impl SessionSummary {
    fn of(s: &DesignSession) -> Self {
        let it = s.current();
        Self {
            id: s.id.clone(),
            stage: s.stage,
            version: s.version,
            iteration: it.map(|i| i.index),
            prompt: s.current_revision().map(|r| r.text.clone()),
            image_count: it.map_or(0, |i| i.images.len()),
            selected_image: it.and_then(|i| i.selected_image),
            mesh_count: it.map_or(0, |i| i.mesh_candidates.len()),
            selected_mesh: it.and_then(|i| i.selected_mesh),
            export: s.export.clone(),
        }
    }

    fn text(&self) -> String {
        let mut t = format!("session {}\nstage {:?} (version {})\n", self.id, self.stage, self.version);
        if let Some(p) = &self.prompt {
            let _ = writeln!(t, "prompt: {p}");
        }
        if let Some(i) = self.iteration {
            let _ = writeln!(t, "iteration {i}: {} images, {} meshes", self.image_count, self.mesh_count);
        }
        t
    }
}

fn summary(s: &DesignSession) -> anyhow::Result<Output> {
    let sum = SessionSummary::of(s);
    Output::new(&sum, sum.text())
}

#[derive(Debug, Serialize)]
struct WrittenImage {
    index: usize,
    blob: ContentHash,
    path: PathBuf,
    revised_prompt: String,
    contains_text: bool,
}

#[derive(Debug, Serialize)]
struct ImagesOutput {
    session_id: String,
    iteration: u32,
    prompt: String,
    images: Vec<WrittenImage>,
}

fn write_images(p: &Pipeline, cfg: &Config, id: &str, out: Option<PathBuf>) -> anyhow::Result<Output> {
    let s = p.load(id)?;
    let it = s.current().ok_or_else(|| invalid("session has no iteration"))?;
    let dir = out.unwrap_or_else(|| exports_dir(cfg, id).join(format!("iteration-{}", it.index)));
    let images = it
        .images
        .iter()
        .enumerate()
        .map(|(index, img): (usize, &CandidateImage)| {
            let path = dir.join(format!("image-{index}.png"));
            write_file(&path, &p.store().blobs.get(&img.blob)?)?;
            Ok(WrittenImage {
                index,
                blob: img.blob.clone(),
                path,
                revised_prompt: img.revised_prompt.clone(),
                contains_text: img.contains_text,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let out = ImagesOutput { session_id: id.to_owned(), iteration: it.index, prompt: it.prompt.text.clone(), images };
    let mut text = format!("iteration {} prompt: {}\n", out.iteration, out.prompt);
    for img in &out.images {
        let _ = writeln!(text, "[{}] {}", img.index, img.path.display());
    }
    Output::new(&out, text)
}

#[derive(Debug, Serialize)]
struct MeshOutput {
    session_id: String,
    candidates: Vec<MeshLine>,
    failures: Vec<BackendFailure>,
}

#[derive(Debug, Serialize)]
struct MeshLine {
    index: usize,
    backend: String,
    blob: ContentHash,
    similarity_to_image: Option<f64>,
    report: ManufacturabilityReport,
}

#[derive(Debug, Serialize)]
struct ExportOutput {
    session_id: String,
    blob: ContentHash,
    path: PathBuf,
    bytes: usize,
    triangles: usize,
    printable: bool,
}

pub fn run(cfg: &Config, cmd: SessionCmd) -> anyhow::Result<Output> {
    let p = pipeline(cfg)?;
    match cmd {
        SessionCmd::New { sketch, note } => {
            let bytes = read_input(&sketch)?;
            summary(&p.create_session(&bytes, &note)?)
        }
        SessionCmd::Show { id } => {
            let s = p.load(&id)?;
            let text = SessionSummary::of(&s).text();
            Output::new(&s, text)
        }
        SessionCmd::Describe { id } => {
            let rev = p.advance_describe(&id)?;
            let s = p.load(&id)?;
            let text =
                format!("description: {}\nprompt [{}]: {}", s.description.clone().unwrap_or_default(), rev.index, rev.text);
            Output::new(&serde_json::json!({"session_id": id, "description": s.description, "revision": rev}), text)
        }
        SessionCmd::Edit { id, text } => {
            let rev = p.edit_description(&id, &text)?;
            let t = format!("prompt [{}]: {}", rev.index, rev.text);
            Output::new(&serde_json::json!({"session_id": id, "revision": rev}), t)
        }
        SessionCmd::Images { id, count, out } => {
            p.advance_images(&id, count.unwrap_or(cfg.pipeline.default_image_count))?;
            write_images(&p, cfg, &id, out)
        }
        SessionCmd::Feedback { id, text, count, out } => {
            p.append_feedback(&id, &text, count.unwrap_or(cfg.pipeline.default_image_count))?;
            write_images(&p, cfg, &id, out)
        }
        SessionCmd::SelectImage { id, index, text_flags } => {
            let flags = match text_flags {
                Some(flagged) => {
                    let n = p.load(&id)?.current().map_or(0, |i| i.images.len());
                    if let Some(bad) = flagged.iter().find(|&&i| i >= n) {
                        return Err(invalid(format!("text flag index {bad} out of range for {n} images")));
                    }
                    Some((0..n).map(|i| flagged.contains(&i)).collect::<Vec<_>>())
                }
                None => None,
            };
            summary(&p.select_image(&id, index, flags.as_deref())?)
        }
        SessionCmd::Mesh { id, backends } => {
            p.advance_mesh(&id, &backends)?;
            let s = p.load(&id)?;
            let it = s.current().expect("mesh stage has an iteration");
            let candidates: Vec<MeshLine> = it
                .mesh_candidates
                .iter()
                .enumerate()
                .map(|(index, c)| MeshLine {
                    index,
                    backend: c.backend.clone(),
                    blob: c.blob.clone(),
                    similarity_to_image: c.similarity_to_image,
                    report: c.report.clone(),
                })
                .collect();
            let mut text = String::new();
            for c in &candidates {
                let _ = writeln!(
                    text,
                    "[{}] {:<16} printable={} triangles={} boundary_edges={} components={}",
                    c.index,
                    c.backend,
                    c.report.printable,
                    c.report.triangle_count,
                    c.report.boundary_edge_count,
                    c.report.component_count
                );
            }
            for f in &it.mesh_failures {
                let _ = writeln!(text, "failed {}: {} ({})", f.backend, f.kind, f.detail);
            }
            Output::new(&MeshOutput { session_id: id, candidates, failures: it.mesh_failures.clone() }, text)
        }
        SessionCmd::SelectMesh { id, index } => summary(&p.select_mesh(&id, index)?),
        SessionCmd::Postprocess { id, plan } => {
            let plan = repair_plan(cfg, plan.as_deref())?;
            let result = p.postprocess(&id, &plan)?;
            let r = &result.report;
            let text = format!(
                "repaired mesh {}\nprintable={} triangles={} boundary_edges={} volume={:.3} mm3",
                result.mesh, r.printable, r.triangle_count, r.boundary_edge_count, r.signed_volume
            );
            Output::new(&result, text)
        }
        SessionCmd::Export { id, out } => {
            let s = p.load(&id)?;
            let blob = match (s.stage, s.export.clone()) {
                (Stage::Exported, Some(h)) => h,
                _ => p.export(&id)?,
            };
            let bytes = p.store().blobs.get(&blob)?;
            let path = out.unwrap_or_else(|| exports_dir(cfg, &id).join(format!("{id}.stl")));
            write_file(&path, &bytes)?;
            let triangles = mesh::read_stl(&bytes)?.len();
            let printable = p.load(&id)?.postprocess.is_some_and(|r| r.report.printable);
            let out = ExportOutput { session_id: id, blob, path, bytes: bytes.len(), triangles, printable };
            let text = format!("wrote {} ({} triangles, printable={})", out.path.display(), out.triangles, out.printable);
            Output::new(&out, text)
        }
    }
}
