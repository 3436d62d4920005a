//! HTTP facade over the draftforge pipeline.
//!
//! Quick stage operations answer synchronously; describe, image
//! generation, meshing, post-processing, dataset builds and metric reports
//! run as jobs that clients poll at `GET /jobs/{id}`. Artifacts are served
//! by content hash with immutable cache headers. Every error body has the
//! shape `{"error": {"kind": ..., "detail": ...}}`.
//!
//! The route table in [`ROUTES`] is the single source for both the router
//! and the [`openapi`] description.

mod error;
mod handlers;
mod jobs;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::{header, HeaderValue, Method};
use axum::routing::{get, patch, post, MethodRouter};
use axum::Router;
use draftforge_core::config::{Config, DatasetConfig, ServerConfig};
use draftforge_core::gateway::{Gateway, GatewayError};
use draftforge_core::pipeline::Pipeline;
use draftforge_core::store::{Store, StoreError};
use draftforge_core::Exec;
use serde_json::{json, Map, Value};
use thiserror::Error;
use tower_http::cors::CorsLayer;

pub use error::{status_for, ApiError, ErrorBody};
pub use handlers::{
    AlignmentRecordRef, AlignmentRequest, DiversityRequest, EditDescription, FeedbackRequest, ImageSetRef, ImagesRequest,
    MeshRequest, PostprocessRequest, SelectImageRequest, SelectMeshRequest,
};
pub use jobs::{IllegalTransition, Job, JobKind, JobRegistry, JobResult, JobState};

const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("invalid CORS origin {0:?}")]
    CorsOrigin(String),
    #[error("server stopped: {0}")]
    Io(#[from] std::io::Error),
}

struct Inner {
    pipeline: Pipeline,
    jobs: Arc<JobRegistry>,
    dataset: DatasetConfig,
    exec: Exec,
    data_dir: PathBuf,
}

/// Shared handler state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, dataset: DatasetConfig, job_workers: usize) -> Self {
        let exec = pipeline.config().exec;
        let data_dir = pipeline.store().root().to_path_buf();
        Self { inner: Arc::new(Inner { pipeline, jobs: Arc::new(JobRegistry::new(job_workers)), dataset, exec, data_dir }) }
    }

    /// Opens the store under `cfg.data_dir` and builds providers from
    /// `cfg.provider`.
    pub fn from_config(cfg: &Config) -> Result<Self, ServerError> {
        let store = Store::open(&cfg.data_dir)?;
        let gateway = Gateway::from_config(&cfg.provider)?;
        Ok(Self::new(Pipeline::new(store, gateway, cfg.pipeline.clone()), cfg.dataset.clone(), cfg.server.job_workers))
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.inner.pipeline
    }

    pub fn jobs(&self) -> &JobRegistry {
        &self.inner.jobs
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.inner.data_dir.join("datasets").join(id)
    }
}

/// One documented endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    pub operation: &'static str,
    pub summary: &'static str,
    /// Request body media type and schema name.
    pub request: Option<(&'static str, &'static str)>,
    /// Success status and response media type.
    pub response: (u16, &'static str),
}

const JSON: &str = "application/json";

macro_rules! route {
    ($m:literal $p:literal $op:literal, $sum:literal, $req:expr, $code:literal $resp:expr) => {
        RouteSpec { method: $m, path: $p, operation: $op, summary: $sum, request: $req, response: ($code, $resp) }
    };
}

pub const ROUTES: &[RouteSpec] = &[
    route!("POST" "/sessions" "createSession", "Create a session from a sketch image (raw body; optional ?note=)", Some(("image/png", "SketchImage")), 201 JSON),
    route!("GET" "/sessions/{id}" "getSession", "Current session state", None, 200 JSON),
    route!("POST" "/sessions/{id}/describe" "describe", "Start a describe job", None, 202 JSON),
    route!("PATCH" "/sessions/{id}/description" "editDescription", "Replace the description with an edited prompt", Some((JSON, "EditDescription")), 200 JSON),
    route!("POST" "/sessions/{id}/images" "generateImages", "Start an image generation job", Some((JSON, "ImagesRequest")), 202 JSON),
    route!("POST" "/sessions/{id}/feedback" "appendFeedback", "Append feedback to the prompt and regenerate images", Some((JSON, "FeedbackRequest")), 202 JSON),
    route!("POST" "/sessions/{id}/select-image" "selectImage", "Select an image, optionally updating contains-text flags", Some((JSON, "SelectImageRequest")), 200 JSON),
    route!("POST" "/sessions/{id}/mesh" "generateMeshes", "Start a mesh generation job", Some((JSON, "MeshRequest")), 202 JSON),
    route!("POST" "/sessions/{id}/select-mesh" "selectMesh", "Select a mesh candidate", Some((JSON, "SelectMeshRequest")), 200 JSON),
    route!("POST" "/sessions/{id}/postprocess" "postprocess", "Start a repair job for the selected mesh", Some((JSON, "PostprocessRequest")), 202 JSON),
    route!("GET" "/sessions/{id}/export.stl" "exportStl", "Binary STL of the repaired mesh", None, 200 "model/stl"),
    route!("GET" "/blobs/{hash}" "getBlob", "Artifact bytes by content hash", None, 200 "application/octet-stream"),
    route!("GET" "/jobs/{id}" "getJob", "Job status", None, 200 JSON),
    route!("POST" "/datasets" "createDataset", "Start a dataset build from a source manifest (optional ?base_dir=)", Some((JSON, "SourceManifest")), 202 JSON),
    route!("GET" "/datasets/{id}/manifest" "getDatasetManifest", "Manifest of a finished dataset build", None, 200 JSON),
    route!("POST" "/metrics/alignment" "alignmentReport", "Start an alignment report job", Some((JSON, "AlignmentRequest")), 202 JSON),
    route!("POST" "/metrics/diversity" "diversityReport", "Start a diversity report job", Some((JSON, "DiversityRequest")), 202 JSON),
    route!("GET" "/healthz" "healthz", "Liveness probe", None, 200 JSON),
];

fn handler(operation: &str) -> MethodRouter<AppState> {
    use handlers as h;
    match operation {
        "createSession" => post(h::create_session),
        "getSession" => get(h::get_session),
        "describe" => post(h::describe),
        "editDescription" => patch(h::edit_description),
        "generateImages" => post(h::images),
        "appendFeedback" => post(h::feedback),
        "selectImage" => post(h::select_image),
        "generateMeshes" => post(h::mesh),
        "selectMesh" => post(h::select_mesh),
        "postprocess" => post(h::postprocess),
        "exportStl" => get(h::export_stl),
        "getBlob" => get(h::get_blob),
        "getJob" => get(h::get_job),
        "createDataset" => post(h::create_dataset),
        "getDatasetManifest" => get(h::dataset_manifest),
        "alignmentReport" => post(h::metrics_alignment),
        "diversityReport" => post(h::metrics_diversity),
        "healthz" => get(h::healthz),
        other => unreachable!("route table names unknown operation {other}"),
    }
}

/// Builds the router from [`ROUTES`], without CORS.
pub fn router(state: AppState) -> Router {
    ROUTES
        .iter()
        .fold(Router::new(), |r, spec| r.route(spec.path, handler(spec.operation)))
        .fallback(handlers::not_found)
        .method_not_allowed_fallback(handlers::method_not_allowed)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Router plus the CORS policy from `cfg`.
pub fn app(state: AppState, cfg: &ServerConfig) -> Result<Router, ServerError> {
    let router = router(state);
    let Some(origin) = &cfg.cors_origin else { return Ok(router) };
    let origin = HeaderValue::from_str(origin).map_err(|_| ServerError::CorsOrigin(origin.clone()))?;
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::PATCH])
        .allow_headers([header::CONTENT_TYPE, header::IF_NONE_MATCH])
        .expose_headers([header::LOCATION, header::ETAG, header::CONTENT_DISPOSITION]);
    Ok(router.layer(cors))
}

/// OpenAPI-style description generated from [`ROUTES`].
pub fn openapi() -> Value {
    let mut paths = Map::new();
    for spec in ROUTES {
        let params: Vec<Value> = spec
            .path
            .split('/')
            .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
            .map(|name| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}}))
            .collect();
        let mut op = json!({
            "operationId": spec.operation,
            "summary": spec.summary,
            "responses": {
                spec.response.0.to_string(): {"content": {spec.response.1: {}}},
                "default": {"description": "error", "content": {JSON: {"schema": {"$ref": "#/components/schemas/Error"}}}},
            },
        });
        if !params.is_empty() {
            op["parameters"] = Value::Array(params);
        }
        if let Some((media, schema)) = spec.request {
            op["requestBody"] =
                json!({"required": true, "content": {media: {"schema": {"$ref": format!("#/components/schemas/{schema}")}}}});
        }
        let entry = paths.entry(spec.path.to_owned()).or_insert_with(|| json!({}));
        entry[spec.method.to_ascii_lowercase()] = op;
    }
    json!({
        "openapi": "3.0.3",
        "info": {"title": "draftforge", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
        "components": {"schemas": {"Error": {
            "type": "object",
            "required": ["error"],
            "properties": {"error": {"type": "object", "required": ["kind", "detail"], "properties": {
                "kind": {"type": "string"}, "detail": {"type": "string"}
            }}}
        }}},
    })
}

/// Serves on an already-bound listener until the process is stopped.
pub async fn serve_on(listener: tokio::net::TcpListener, app: Router) -> Result<(), ServerError> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, app).await?;
    Ok(())
}

/// Opens the store, binds `cfg.server.bind` and serves.
pub async fn serve(cfg: &Config) -> Result<(), ServerError> {
    let state = AppState::from_config(cfg)?;
    let app = app(state, &cfg.server)?;
    let listener = tokio::net::TcpListener::bind(&cfg.server.bind)
        .await
        .map_err(|source| ServerError::BindFailure { addr: cfg.server.bind.clone(), source })?;
    serve_on(listener, app).await
}
