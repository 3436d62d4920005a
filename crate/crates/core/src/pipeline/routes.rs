use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CandidateImage, Pipeline, PipelineError};
use crate::imaging;
use crate::mesh::{ManufacturabilityReport, RepairPlan};
use crate::metrics::{clip_score, pairwise_diversity, EmbeddingVector};
use crate::store::ContentHash;

/// End-to-end paths compared against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// sketch → text → images → meshes → STL
    Full,
    /// sketch → mesh
    SketchDirect,
    /// sketch → sketch-conditioned images → meshes
    SketchGuided,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::Full, Route::SketchDirect, Route::SketchGuided];

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Full => "full",
            Route::SketchDirect => "sketch_direct",
            Route::SketchGuided => "sketch_guided",
        }
    }
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Route {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Route::Full),
            "sketch_direct" => Ok(Route::SketchDirect),
            "sketch_guided" => Ok(Route::SketchGuided),
            _ => Err(PipelineError::InvalidArgument(format!("unknown route {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteOptions {
    pub count: usize,
    /// Empty means the pipeline's default backend list.
    pub backends: Vec<String>,
    /// Text passed to the sketch-conditioned provider.
    pub guided_prompt: String,
    pub user_note: String,
    pub plan: RepairPlan,
}

impl Default for RouteOptions {
    fn default() -> Self {
        Self {
            count: 4,
            backends: Vec::new(),
            guided_prompt: String::new(),
            user_note: String::new(),
            plan: RepairPlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMesh {
    /// Source image within the record's `images`; `None` for the sketch.
    pub image_index: Option<usize>,
    pub backend: String,
    pub blob: ContentHash,
    pub report: ManufacturabilityReport,
    pub similarity_to_image: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteFailure {
    pub step: String,
    pub image_index: Option<usize>,
    pub backend: Option<String>,
    pub kind: String,
    pub detail: String,
}

impl RouteFailure {
    fn new(step: &str, image_index: Option<usize>, backend: Option<&str>, e: &PipelineError) -> Self {
        Self {
            step: step.to_owned(),
            image_index,
            backend: backend.map(str::to_owned),
            kind: e.kind().to_owned(),
            detail: e.to_string(),
        }
    }
}

/// One route's outcome for one sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub route: Route,
    pub sketch_hash: ContentHash,
    pub images: Vec<ContentHash>,
    /// Mean pairwise similarity of `images`; lower is more diverse.
    pub image_diversity: Option<f64>,
    pub mean_similarity_to_sketch: Option<f64>,
    pub meshes: Vec<RouteMesh>,
    pub failures: Vec<RouteFailure>,
    pub session_id: Option<String>,
    pub exported_stl: Option<ContentHash>,
    pub final_report: Option<ManufacturabilityReport>,
}

/// Index of the first image not flagged as containing text.
pub fn first_unflagged(images: &[CandidateImage]) -> Option<usize> {
    images.iter().position(|i| !i.contains_text)
}

/// Runs one route. Provider failures are recorded in the result; only
/// invalid input and storage errors are returned as `Err`.
pub fn run_route(p: &Pipeline, sketch: &[u8], route: Route, opts: &RouteOptions) -> Result<ComparisonRecord, PipelineError> {
    imaging::decode(sketch).map_err(|e| PipelineError::UnsupportedImage(e.0))?;
    if opts.count == 0 {
        return Err(PipelineError::InvalidCount);
    }
    opts.plan.validate().map_err(|e| PipelineError::InvalidArgument(e.to_string()))?;
    let backends = if opts.backends.is_empty() { p.default_backends() } else { opts.backends.clone() };
    if backends.is_empty() {
        return Err(PipelineError::InvalidArgument("no mesh backends configured".into()));
    }
    if let Some(unknown) = backends.iter().find(|b| !p.gateway().backends().contains(b)) {
        return Err(PipelineError::UnknownBackend(unknown.clone()));
    }
    let mut rec = ComparisonRecord {
        route,
        sketch_hash: p.store().blobs.put(sketch)?,
        images: Vec::new(),
        image_diversity: None,
        mean_similarity_to_sketch: None,
        meshes: Vec::new(),
        failures: Vec::new(),
        session_id: None,
        exported_stl: None,
        final_report: None,
    };
    tracing::info!(%route, count = opts.count, "running route");
    match route {
        Route::SketchDirect => sketch_direct(p, sketch, &backends[0], &mut rec),
        Route::SketchGuided => sketch_guided(p, sketch, &backends[0], opts, &mut rec)?,
        Route::Full => full(p, sketch, &backends, opts, &mut rec)?,
    }
    image_metrics(p, sketch, &mut rec)?;
    Ok(rec)
}

fn sketch_direct(p: &Pipeline, sketch: &[u8], backend: &str, rec: &mut ComparisonRecord) {
    match p.mesh_candidate(sketch, backend, None) {
        Ok(c) => rec.meshes.push(RouteMesh {
            image_index: None,
            backend: c.backend,
            blob: c.blob,
            report: c.report,
            similarity_to_image: None,
        }),
        Err(e) => rec.failures.push(RouteFailure::new("mesh", None, Some(backend), &e)),
    }
}

fn sketch_guided(
    p: &Pipeline,
    sketch: &[u8],
    backend: &str,
    opts: &RouteOptions,
    rec: &mut ComparisonRecord,
) -> Result<(), PipelineError> {
    let images = match p.gateway().sketch_guided_images(sketch, &opts.guided_prompt, opts.count) {
        Ok(images) => images,
        Err(e) => {
            rec.failures.push(RouteFailure::new("guided_images", None, None, &e.into()));
            return Ok(());
        }
    };
    let mut bytes = Vec::with_capacity(images.len());
    for img in images {
        rec.images.push(p.store().blobs.put(&img.bytes)?);
        bytes.push(img.bytes);
    }
    let results = p.config().exec.map_indexed(bytes.len(), |i| {
        let emb = p.gateway().embed_image(&bytes[i]).ok();
        p.mesh_candidate(&bytes[i], backend, emb.as_ref())
    });
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => rec.meshes.push(RouteMesh {
                image_index: Some(i),
                backend: c.backend,
                blob: c.blob,
                report: c.report,
                similarity_to_image: c.similarity_to_image,
            }),
            Err(e) => rec.failures.push(RouteFailure::new("mesh", Some(i), Some(backend), &e)),
        }
    }
    Ok(())
}

/// Failures of the staged session that end the route early.
fn recorded(step: &str, e: PipelineError, rec: &mut ComparisonRecord) -> Result<(), PipelineError> {
    match e {
        PipelineError::Store(_) | PipelineError::Corrupt(_) => Err(e),
        PipelineError::AllBackendsFailed(failures) => {
            rec.failures.extend(failures.into_iter().map(|f| RouteFailure {
                step: step.to_owned(),
                image_index: None,
                backend: Some(f.backend),
                kind: f.kind,
                detail: f.detail,
            }));
            Ok(())
        }
        e => {
            rec.failures.push(RouteFailure::new(step, None, None, &e));
            Ok(())
        }
    }
}

macro_rules! step {
    ($rec:expr, $name:literal, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return recorded($name, e, $rec),
        }
    };
}

fn full(
    p: &Pipeline,
    sketch: &[u8],
    backends: &[String],
    opts: &RouteOptions,
    rec: &mut ComparisonRecord,
) -> Result<(), PipelineError> {
    let session = p.create_session(sketch, &opts.user_note)?;
    let id = session.id.clone();
    rec.session_id = Some(id.clone());
    step!(rec, "describe", p.advance_describe(&id));
    let images = step!(rec, "images", p.advance_images(&id, opts.count));
    rec.images = images.iter().map(|i| i.blob.clone()).collect();
    let Some(index) = first_unflagged(&images) else {
        rec.failures.push(RouteFailure {
            step: "select_image".into(),
            image_index: None,
            backend: None,
            kind: "no_text_free_image".into(),
            detail: "every image is flagged as containing text".into(),
        });
        return Ok(());
    };
    step!(rec, "select_image", p.select_image(&id, index, None));
    let candidates = step!(rec, "mesh", p.advance_mesh(&id, backends));
    let session = p.load(&id)?;
    for f in &session.current().expect("meshed session has an iteration").mesh_failures {
        rec.failures.push(RouteFailure {
            step: "mesh".into(),
            image_index: Some(index),
            backend: Some(f.backend.clone()),
            kind: f.kind.clone(),
            detail: f.detail.clone(),
        });
    }
    rec.meshes = candidates
        .into_iter()
        .map(|c| RouteMesh {
            image_index: Some(index),
            backend: c.backend,
            blob: c.blob,
            report: c.report,
            similarity_to_image: c.similarity_to_image,
        })
        .collect();
    step!(rec, "select_mesh", p.select_mesh(&id, 0));
    let result = step!(rec, "postprocess", p.postprocess(&id, &opts.plan));
    rec.final_report = Some(result.report);
    rec.exported_stl = Some(step!(rec, "export", p.export(&id)));
    Ok(())
}

fn image_metrics(p: &Pipeline, sketch: &[u8], rec: &mut ComparisonRecord) -> Result<(), PipelineError> {
    if rec.images.is_empty() {
        return Ok(());
    }
    let embed = |bytes: &[u8]| p.gateway().embed_image(bytes).map_err(PipelineError::from);
    let sketch_emb = match embed(sketch) {
        Ok(e) => e,
        Err(e) => return recorded("metrics", e, rec),
    };
    let mut embs: Vec<EmbeddingVector> = Vec::with_capacity(rec.images.len());
    for h in &rec.images {
        match embed(&p.store().blobs.get(h)?) {
            Ok(e) => embs.push(e),
            Err(e) => return recorded("metrics", e, rec),
        }
    }
    let sims: Result<Vec<f64>, _> = embs.iter().map(|e| clip_score(&sketch_emb, e).map(|s| s.value())).collect();
    match sims {
        Ok(s) => rec.mean_similarity_to_sketch = Some(s.iter().sum::<f64>() / s.len() as f64),
        Err(e) => rec.failures.push(RouteFailure {
            step: "metrics".into(),
            image_index: None,
            backend: None,
            kind: "embedding".into(),
            detail: e.to_string(),
        }),
    }
    if embs.len() >= 2 {
        rec.image_diversity = pairwise_diversity(&embs).ok().map(|s| s.value());
    }
    Ok(())
}
