//! Design sessions: the staged sketch → text → images → meshes → STL flow,
//! persisted as an event log and folded back into state on every read.

mod engine;
mod routes;
mod session;
mod transitions;

use thiserror::Error;

use crate::gateway::{ProviderError, ProviderErrorKind};
use crate::store::StoreError;

pub use engine::Pipeline;
pub use routes::{first_unflagged, run_route, ComparisonRecord, Route, RouteFailure, RouteMesh, RouteOptions};
pub use session::{
    apply, fold, BackendFailure, CandidateImage, DesignSession, FoldError, ImageOrigin, Iteration, MeshCandidate,
    PostProcessResult, PromptRevision, SessionEvent, Stage,
};
pub use transitions::Operation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("operation {operation:?} is not allowed in stage {stage:?}")]
    InvalidState { stage: Stage, operation: Operation },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unsupported image: {0}")]
    UnsupportedImage(String),
    #[error("text must not be empty")]
    EmptyText,
    #[error("count must be at least 1")]
    InvalidCount,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("image {0} is flagged as containing text")]
    TextFlaggedImage(usize),
    #[error("every mesh backend failed ({} attempted)", .0.len())]
    AllBackendsFailed(Vec<BackendFailure>),
    #[error("unknown mesh backend {0:?}")]
    UnknownBackend(String),
    #[error("mesh parse error: {0}")]
    MeshParse(String),
    #[error(transparent)]
    Provider(ProviderError),
    #[error(transparent)]
    Store(StoreError),
    #[error("session log does not fold: {0}")]
    Corrupt(String),
}

/// Coarse error grouping shared by the CLI exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NotFound,
    InvalidState,
    Conflict,
    Provider(ProviderErrorKind),
    Internal,
}

impl PipelineError {
    /// Stable name used in JSON error bodies; provider errors use their
    /// taxonomy name.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidState { .. } => "InvalidState",
            Self::NotFound(_) => "NotFound",
            Self::UnsupportedImage(_) => "UnsupportedImage",
            Self::EmptyText => "EmptyText",
            Self::InvalidCount => "InvalidCount",
            Self::InvalidArgument(_) => "InvalidArgument",
            Self::IndexOutOfRange { .. } => "IndexOutOfRange",
            Self::TextFlaggedImage(_) => "TextFlaggedImage",
            Self::AllBackendsFailed(_) => "AllBackendsFailed",
            Self::UnknownBackend(_) => "UnknownBackend",
            Self::MeshParse(_) => "MeshParse",
            Self::Provider(p) => p.kind.as_str(),
            Self::Store(StoreError::SequenceConflict { .. }) => "SequenceConflict",
            Self::Store(_) => "StorageFailure",
            Self::Corrupt(_) => "CorruptLog",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Self::InvalidState { .. } => ErrorClass::InvalidState,
            Self::NotFound(_) => ErrorClass::NotFound,
            Self::UnsupportedImage(_)
            | Self::EmptyText
            | Self::InvalidCount
            | Self::InvalidArgument(_)
            | Self::IndexOutOfRange { .. }
            | Self::TextFlaggedImage(_)
            | Self::UnknownBackend(_) => ErrorClass::Validation,
            Self::Provider(p) => ErrorClass::Provider(p.kind),
            Self::AllBackendsFailed(_) | Self::MeshParse(_) => ErrorClass::Provider(ProviderErrorKind::Malformed),
            Self::Store(StoreError::SequenceConflict { .. }) => ErrorClass::Conflict,
            Self::Store(_) | Self::Corrupt(_) => ErrorClass::Internal,
        }
    }
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(what) => Self::NotFound(what),
            other => Self::Store(other),
        }
    }
}
