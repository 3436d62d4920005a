use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use draftforge_core::dataset::{self, BuildOptions, SourceManifest, MANIFEST_FILE};
use draftforge_core::imaging;
use draftforge_core::mesh::RepairPlan;
use draftforge_core::metrics::{
    alignment_report, diversity_distribution, AlignmentInput, DiversityReport, ImageSet, DEFAULT_HISTOGRAM_BINS,
    DEFAULT_PERCENTILES,
};
use draftforge_core::pipeline::{Operation, PipelineError, Stage};
use draftforge_core::store::ContentHash;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::jobs::{Job, JobKind, JobResult};
use crate::AppState;

/// JSON body extractor whose rejections use the standard error envelope.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Self(v)),
            Err(rej) => Err(rejection(rej)),
        }
    }
}

fn rejection(rej: JsonRejection) -> ApiError {
    let status = match rej {
        JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    };
    ApiError::new(status, "InvalidBody", rej.body_text())
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

const IMMUTABLE: &str = "public, max-age=31536000, immutable";

fn accepted(job: Job) -> Response {
    let location = format!("/jobs/{}", job.id);
    (StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(job)).into_response()
}

/// Checks the operation is legal now, then runs `work` as a session job.
async fn session_job<F>(st: AppState, id: String, op: Operation, kind: JobKind, work: F) -> Result<Response, ApiError>
where
    F: FnOnce(&AppState, &str) -> Result<(), PipelineError> + Send + 'static,
{
    let check = st.clone();
    let sid = id.clone();
    blocking(move || Ok(check.pipeline().check(&sid, op)?)).await?;
    let jobs = Arc::clone(&st.inner.jobs);
    let sid = id.clone();
    let job = jobs.submit(kind, Some(id), move || {
        work(&st, &sid)?;
        let stage = st.pipeline().load(&sid)?.stage;
        Ok(JobResult::Session { session_id: sid, stage })
    })?;
    Ok(accepted(job))
}

pub async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateQuery {
    #[serde(default)]
    pub note: String,
}

pub async fn create_session(State(st): State<AppState>, Query(q): Query<CreateQuery>, body: Bytes) -> Result<Response, ApiError> {
    let session = blocking(move || Ok(st.pipeline().create_session(&body, &q.note)?)).await?;
    let location = format!("/sessions/{}", session.id);
    Ok((StatusCode::CREATED, [(header::LOCATION, location)], Json(session)).into_response())
}

pub async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = blocking(move || Ok(st.pipeline().load(&id)?)).await?;
    Ok(Json(session).into_response())
}

pub async fn describe(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    session_job(st, id, Operation::Describe, JobKind::Describe, |st, id| st.pipeline().advance_describe(id).map(drop)).await
}

#[derive(Debug, Deserialize, Serialize)]
pub struct EditDescription {
    pub text: String,
}

pub async fn edit_description(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<EditDescription>,
) -> Result<Response, ApiError> {
    let rev = blocking(move || Ok(st.pipeline().edit_description(&id, &req.text)?)).await?;
    Ok(Json(rev).into_response())
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct ImagesRequest {
    #[serde(default)]
    pub count: Option<usize>,
}

pub async fn images(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ImagesRequest>,
) -> Result<Response, ApiError> {
    let count = req.count.unwrap_or(st.pipeline().config().default_image_count);
    if count == 0 {
        return Err(PipelineError::InvalidCount.into());
    }
    session_job(st, id, Operation::AdvanceImages, JobKind::Images, move |st, id| {
        st.pipeline().advance_images(id, count).map(drop)
    })
    .await
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FeedbackRequest {
    pub text: String,
    #[serde(default)]
    pub count: Option<usize>,
}

pub async fn feedback(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<FeedbackRequest>,
) -> Result<Response, ApiError> {
    let count = req.count.unwrap_or(st.pipeline().config().default_image_count);
    if count == 0 {
        return Err(PipelineError::InvalidCount.into());
    }
    if req.text.trim().is_empty() {
        return Err(PipelineError::EmptyText.into());
    }
    session_job(st, id, Operation::AppendFeedback, JobKind::Images, move |st, id| {
        st.pipeline().append_feedback(id, &req.text, count).map(drop)
    })
    .await
}

#[derive(Debug, Deserialize, Serialize)]
pub struct SelectImageRequest {
    pub index: usize,
    #[serde(default)]
    pub contains_text_flags: Option<Vec<bool>>,
}

pub async fn select_image(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<SelectImageRequest>,
) -> Result<Response, ApiError> {
    let s = blocking(move || Ok(st.pipeline().select_image(&id, req.index, req.contains_text_flags.as_deref())?)).await?;
    Ok(Json(s).into_response())
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct MeshRequest {
    #[serde(default)]
    pub backends: Vec<String>,
}

pub async fn mesh(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<MeshRequest>,
) -> Result<Response, ApiError> {
    if let Some(unknown) = req.backends.iter().find(|b| !st.pipeline().gateway().backends().contains(b)) {
        return Err(PipelineError::UnknownBackend(unknown.clone()).into());
    }
    session_job(st, id, Operation::AdvanceMesh, JobKind::Mesh, move |st, id| {
        st.pipeline().advance_mesh(id, &req.backends).map(drop)
    })
    .await
}

#[derive(Debug, Deserialize, Serialize)]
pub struct SelectMeshRequest {
    pub index: usize,
}

pub async fn select_mesh(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<SelectMeshRequest>,
) -> Result<Response, ApiError> {
    let s = blocking(move || Ok(st.pipeline().select_mesh(&id, req.index)?)).await?;
    Ok(Json(s).into_response())
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct PostprocessRequest {
    /// Omitted: the configured default plan.
    #[serde(default)]
    pub plan: Option<RepairPlan>,
}

pub async fn postprocess(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<PostprocessRequest>,
) -> Result<Response, ApiError> {
    let plan = req.plan.unwrap_or(st.pipeline().config().repair);
    plan.validate().map_err(|e| PipelineError::InvalidArgument(e.to_string()))?;
    session_job(st, id, Operation::PostProcess, JobKind::Postprocess, move |st, id| {
        st.pipeline().postprocess(id, &plan).map(drop)
    })
    .await
}

/// Returns the session's STL, exporting first when the session is
/// post-processed but not yet exported.
pub async fn export_stl(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sid = id.clone();
    let bytes = blocking(move || {
        let p = st.pipeline();
        let s = p.load(&sid)?;
        let hash = match (s.stage, s.export) {
            (Stage::Exported, Some(h)) => h,
            (Stage::PostProcessed, _) => p.export(&sid)?,
            (stage, _) => return Err(PipelineError::InvalidState { stage, operation: Operation::Export }.into()),
        };
        Ok(p.store().blobs.get(&hash)?)
    })
    .await?;
    let disposition = format!("attachment; filename=\"{id}.stl\"");
    Ok(([(header::CONTENT_TYPE, "model/stl".to_owned()), (header::CONTENT_DISPOSITION, disposition)], bytes).into_response())
}

fn sniff(bytes: &[u8]) -> &'static str {
    if imaging::is_png(bytes) {
        "image/png"
    } else if bytes.starts_with(b"ply\n") || bytes.starts_with(b"ply\r\n") {
        "application/x-ply"
    } else if bytes.first().is_some_and(|&b| b == b'{' || b == b'[')
        && serde_json::from_slice::<serde::de::IgnoredAny>(bytes).is_ok()
    {
        "application/json"
    } else if bytes.len() >= 84
        && bytes.len() == 84 + 50 * u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize
    {
        "model/stl"
    } else {
        "application/octet-stream"
    }
}

pub async fn get_blob(State(st): State<AppState>, Path(hash): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let hash = ContentHash::parse(&hash).map_err(|e| ApiError::validation("InvalidHash", e.to_string()))?;
    let etag = format!("\"{hash}\"");
    let cached =
        headers.get(header::IF_NONE_MATCH).and_then(|v| v.to_str().ok()).is_some_and(|v| v.split(',').any(|t| t.trim() == etag));
    if cached && st.pipeline().store().blobs.contains(&hash) {
        return Ok(
            (StatusCode::NOT_MODIFIED, [(header::ETAG, etag), (header::CACHE_CONTROL, IMMUTABLE.to_owned())]).into_response()
        );
    }
    let bytes = blocking(move || Ok(st.pipeline().store().blobs.get(&hash)?)).await?;
    let mut resp = Response::new(Body::from(bytes.clone()));
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(sniff(&bytes)));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static(IMMUTABLE));
    h.insert(header::ETAG, HeaderValue::from_str(&etag).expect("hex etag is a valid header"));
    Ok(resp)
}

pub async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    st.inner.jobs.get(&id).map(|j| Json(j).into_response()).ok_or_else(|| ApiError::not_found(format!("job {id}")))
}

#[derive(Debug, Default, Deserialize)]
pub struct DatasetQuery {
    /// Directory relative sketch paths resolve against; defaults to the
    /// data directory.
    pub base_dir: Option<PathBuf>,
}

pub async fn create_dataset(
    State(st): State<AppState>,
    Query(q): Query<DatasetQuery>,
    ApiJson(mut source): ApiJson<SourceManifest>,
) -> Result<Response, ApiError> {
    source.base_dir = q.base_dir.unwrap_or_else(|| st.data_dir().to_path_buf());
    let checked = source.clone();
    let report = blocking(move || Ok(dataset::validate(&checked))).await?;
    if report.empty_manifest {
        return Err(dataset::DatasetError::EmptyManifest.into());
    }
    if report.valid_count() == 0 {
        return Err(dataset::DatasetError::NoValidEntries.into());
    }
    let dataset_id = uuid::Uuid::new_v4().to_string();
    let out = st.dataset_dir(&dataset_id);
    let jobs = Arc::clone(&st.inner.jobs);
    let job = jobs.submit(JobKind::DatasetBuild, None, move || {
        dataset::build(st.pipeline().gateway(), &st.inner.dataset, &source, &out, &BuildOptions::default())?;
        Ok(JobResult::Dataset { dataset_id })
    })?;
    Ok(accepted(job))
}

pub async fn dataset_manifest(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let parsed = uuid::Uuid::parse_str(&id).map_err(|_| ApiError::not_found(format!("dataset {id}")))?;
    let path = st.dataset_dir(&parsed.to_string()).join(MANIFEST_FILE);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::not_found(format!("manifest for dataset {id}"))),
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct AlignmentRecordRef {
    pub record_id: String,
    pub sketch: ContentHash,
    pub text: String,
    pub images: Vec<ContentHash>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct AlignmentRequest {
    pub records: Vec<AlignmentRecordRef>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ImageSetRef {
    pub set_id: String,
    pub images: Vec<ContentHash>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct DiversityRequest {
    pub sets: Vec<ImageSetRef>,
    #[serde(default)]
    pub percentiles: Option<Vec<f64>>,
    #[serde(default)]
    pub bins: Option<usize>,
}

fn store_report<T: Serialize>(st: &AppState, report: &T) -> Result<JobResult, ApiError> {
    let bytes = serde_json::to_vec_pretty(report).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(JobResult::Blob { hash: st.pipeline().store().blobs.put(&bytes)? })
}

pub async fn metrics_alignment(
    State(st): State<AppState>,
    ApiJson(req): ApiJson<AlignmentRequest>,
) -> Result<Response, ApiError> {
    if req.records.is_empty() {
        return Err(draftforge_core::metrics::MetricsError::EmptyCorpus.into());
    }
    let jobs = Arc::clone(&st.inner.jobs);
    let job = jobs.submit(JobKind::MetricsReport, None, move || {
        let p = st.pipeline();
        let (g, blobs) = (p.gateway(), &p.store().blobs);
        let embed = |h: &ContentHash| -> Result<_, ApiError> { Ok(g.embed_image(&blobs.get(h)?).map_err(PipelineError::from)?) };
        let corpus = st.inner.exec.map(&req.records, |r| -> Result<AlignmentInput, ApiError> {
            Ok(AlignmentInput {
                record_id: r.record_id.clone(),
                sketch: embed(&r.sketch)?,
                text: g.embed_text(&r.text).map_err(PipelineError::from)?,
                images: r.images.iter().map(embed).collect::<Result<_, _>>()?,
            })
        });
        let corpus = corpus.into_iter().collect::<Result<Vec<_>, _>>()?;
        store_report(&st, &alignment_report(&corpus, st.inner.exec)?)
    })?;
    Ok(accepted(job))
}

pub async fn metrics_diversity(
    State(st): State<AppState>,
    ApiJson(req): ApiJson<DiversityRequest>,
) -> Result<Response, ApiError> {
    if req.sets.is_empty() {
        return Err(draftforge_core::metrics::MetricsError::EmptyCorpus.into());
    }
    let percentiles = req.percentiles.unwrap_or_else(|| DEFAULT_PERCENTILES.to_vec());
    if let Some(&p) = percentiles.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(draftforge_core::metrics::MetricsError::InvalidPercentile(p).into());
    }
    let bins = req.bins.unwrap_or(DEFAULT_HISTOGRAM_BINS);
    let jobs = Arc::clone(&st.inner.jobs);
    let job = jobs.submit(JobKind::MetricsReport, None, move || {
        let p = st.pipeline();
        let (g, blobs) = (p.gateway(), &p.store().blobs);
        let sets = st.inner.exec.map(&req.sets, |s| -> Result<ImageSet, ApiError> {
            let embeddings = s
                .images
                .iter()
                .map(|h| Ok(g.embed_image(&blobs.get(h)?).map_err(PipelineError::from)?))
                .collect::<Result<_, ApiError>>()?;
            Ok(ImageSet { set_id: s.set_id.clone(), embeddings })
        });
        let sets = sets.into_iter().collect::<Result<Vec<_>, _>>()?;
        let dist = diversity_distribution(&sets, &percentiles, st.inner.exec)?;
        store_report(&st, &DiversityReport::new(&dist, bins))
    })?;
    Ok(accepted(job))
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}

pub async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed for this route")
}
