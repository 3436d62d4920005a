//! Exit codes: 0 success, 1 internal, 2 validation, 3 provider failure,
//! 4 invalid state.

use draftforge_core::config::ConfigError;
use draftforge_core::dataset::DatasetError;
use draftforge_core::gateway::GatewayError;
use draftforge_core::mesh::MeshError;
use draftforge_core::metrics::{EmbedError, MetricsError};
use draftforge_core::pipeline::{ErrorClass, PipelineError};
use draftforge_core::store::StoreError;

pub const INTERNAL: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const PROVIDER: u8 = 3;
pub const INVALID_STATE: u8 = 4;

/// Bad user input that no library error describes (unreadable files,
/// malformed arguments).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Reads a file, treating failure as invalid input.
pub fn read_input(path: &std::path::Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn class_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Validation | ErrorClass::NotFound => VALIDATION,
        ErrorClass::InvalidState | ErrorClass::Conflict => INVALID_STATE,
        ErrorClass::Provider(_) => PROVIDER,
        ErrorClass::Internal => INTERNAL,
    }
}

/// Exit code and error kind for the first recognizable error in the chain.
pub fn exit_code(err: &anyhow::Error) -> (u8, String) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return (class_code(e.class()), e.kind().to_owned());
        }
        if let Some(e) = cause.downcast_ref::<GatewayError>() {
            return match e {
                GatewayError::Provider(p) => (PROVIDER, p.kind.as_str().to_owned()),
                other => (VALIDATION, PipelineError::from(other.clone()).kind().to_owned()),
            };
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return match e {
                MetricsError::Embed(EmbedError::Provider(p)) => (PROVIDER, p.kind.as_str().to_owned()),
                _ => (VALIDATION, "InvalidMetricsInput".to_owned()),
            };
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return match e {
                DatasetError::Store(_) | DatasetError::OutputDirUnwritable(_) | DatasetError::CorruptJournal { .. } => {
                    (INTERNAL, "DatasetStorage".to_owned())
                }
                DatasetError::FingerprintMismatch { .. } => (INVALID_STATE, "FingerprintMismatch".to_owned()),
                _ => (VALIDATION, "InvalidDataset".to_owned()),
            };
        }
        if let Some(e) = cause.downcast_ref::<StoreError>() {
            return (class_code(PipelineError::from(e.clone()).class()), PipelineError::from(e.clone()).kind().to_owned());
        }
        if cause.is::<MeshError>() {
            return (VALIDATION, "InvalidMesh".to_owned());
        }
        if cause.is::<ConfigError>() {
            return (VALIDATION, "InvalidConfig".to_owned());
        }
        if cause.is::<Invalid>() {
            return (VALIDATION, "InvalidInput".to_owned());
        }
    }
    (INTERNAL, "Internal".to_owned())
}
