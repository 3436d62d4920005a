use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use draftforge_core::dataset::DatasetError;
use draftforge_core::gateway::ProviderErrorKind;
use draftforge_core::metrics::{EmbedError, MetricsError};
use draftforge_core::pipeline::{ErrorClass, PipelineError};
use draftforge_core::store::StoreError;
use serde::{Deserialize, Serialize};

/// `{kind, detail}` pair carried by every error body and failed job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Envelope {
    error: ErrorBody,
}

/// An error on its way to becoming an HTTP response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { kind: kind.into(), detail: detail.into() } }
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", detail)
    }

    pub fn validation(kind: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, detail)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
    }
}

/// Status code for an error class.
pub fn status_for(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::InvalidState | ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Provider(kind) => provider_status(kind),
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn provider_status(kind: ProviderErrorKind) -> StatusCode {
    match kind {
        ProviderErrorKind::SafetyRejected => StatusCode::UNPROCESSABLE_ENTITY,
        ProviderErrorKind::RateLimited => StatusCode::TOO_MANY_REQUESTS,
        ProviderErrorKind::Transient | ProviderErrorKind::Unavailable | ProviderErrorKind::Malformed => StatusCode::BAD_GATEWAY,
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        Self::new(status_for(e.class()), e.kind(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<MetricsError> for ApiError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Embed(EmbedError::Provider(p)) => Self::new(provider_status(p.kind), p.kind.as_str(), p.detail),
            MetricsError::EmptyCorpus => Self::validation("EmptyCorpus", e.to_string()),
            MetricsError::TooFewImages(_) => Self::validation("TooFewImages", e.to_string()),
            MetricsError::NoImages(_) => Self::validation("NoImages", e.to_string()),
            MetricsError::InvalidPercentile(_) => Self::validation("InvalidPercentile", e.to_string()),
            MetricsError::Embed(_) => Self::validation("InvalidEmbedding", e.to_string()),
        }
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        let detail = e.to_string();
        match e {
            DatasetError::EmptyManifest => Self::validation("EmptyManifest", detail),
            DatasetError::NoValidEntries => Self::validation("NoValidEntries", detail),
            DatasetError::Source { .. } => Self::validation("InvalidManifest", detail),
            DatasetError::FingerprintMismatch { .. } => Self::new(StatusCode::CONFLICT, "FingerprintMismatch", detail),
            DatasetError::NoJournal(_) => Self::not_found(detail),
            DatasetError::Interrupted { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Interrupted", detail),
            DatasetError::OutputDirUnwritable(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "OutputDirUnwritable", detail),
            DatasetError::CorruptJournal { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "CorruptJournal", detail),
            DatasetError::Store(s) => s.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(Envelope { error: self.body })).into_response()
    }
}
