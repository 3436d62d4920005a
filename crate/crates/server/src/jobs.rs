//! Long-running stage work tracked as pollable job resources.
//!
//! Jobs run on a bounded pool: a semaphore caps how many execute at once
//! and the work itself runs on tokio's blocking threads, since the core
//! pipeline is synchronous. A session can own at most one unfinished job.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use draftforge_core::pipeline::Stage;
use draftforge_core::store::ContentHash;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::error::{ApiError, ErrorBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Describe,
    Images,
    Mesh,
    Postprocess,
    DatasetBuild,
    MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed)
    }
}

/// What a finished job produced, by reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobResult {
    Session { session_id: String, stage: Stage },
    Blob { hash: ContentHash },
    Dataset { dataset_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub session_id: Option<String>,
    pub kind: JobKind,
    pub state: JobState,
    pub error: Option<ErrorBody>,
    pub result: Option<JobResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("job cannot move from {from:?} to {to:?}")]
pub struct IllegalTransition {
    pub from: JobState,
    pub to: JobState,
}

impl Job {
    pub fn new(kind: JobKind, session_id: Option<String>) -> Self {
        Self { id: uuid::Uuid::new_v4().to_string(), session_id, kind, state: JobState::Queued, error: None, result: None }
    }

    pub fn start(&mut self) -> Result<(), IllegalTransition> {
        self.transition(JobState::Running)
    }

    pub fn finish(&mut self, outcome: Result<JobResult, ErrorBody>) -> Result<(), IllegalTransition> {
        match outcome {
            Ok(r) => {
                self.transition(JobState::Succeeded)?;
                self.result = Some(r);
            }
            Err(e) => {
                self.transition(JobState::Failed)?;
                self.error = Some(e);
            }
        }
        Ok(())
    }

    fn transition(&mut self, to: JobState) -> Result<(), IllegalTransition> {
        let ok = matches!(
            (self.state, to),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Succeeded | JobState::Failed)
        );
        if !ok {
            return Err(IllegalTransition { from: self.state, to });
        }
        self.state = to;
        Ok(())
    }
}

#[derive(Default)]
struct Table {
    jobs: HashMap<String, Job>,
    /// session id -> unfinished job id
    busy: HashMap<String, String>,
}

pub struct JobRegistry {
    table: Mutex<Table>,
    permits: Arc<Semaphore>,
}

impl JobRegistry {
    pub fn new(workers: usize) -> Self {
        Self { table: Mutex::new(Table::default()), permits: Arc::new(Semaphore::new(workers.max(1))) }
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.lock().jobs.get(id).cloned()
    }

    /// Queues `work`; fails with 409 when `session_id` already has an
    /// unfinished job. Must be called from within a tokio runtime.
    pub fn submit<F>(self: &Arc<Self>, kind: JobKind, session_id: Option<String>, work: F) -> Result<Job, ApiError>
    where
        F: FnOnce() -> Result<JobResult, ApiError> + Send + 'static,
    {
        let job = Job::new(kind, session_id.clone());
        {
            let mut t = self.lock();
            if let Some(sid) = &session_id {
                if let Some(running) = t.busy.get(sid) {
                    return Err(ApiError::new(
                        StatusCode::CONFLICT,
                        "JobInFlight",
                        format!("session {sid} already has job {running} in flight"),
                    ));
                }
                t.busy.insert(sid.clone(), job.id.clone());
            }
            t.jobs.insert(job.id.clone(), job.clone());
        }
        tracing::info!(job = %job.id, ?kind, session = ?session_id, "job queued");

        let registry = Arc::clone(self);
        let id = job.id.clone();
        tokio::spawn(async move {
            let _permit = registry.permits.clone().acquire_owned().await.expect("semaphore never closed");
            registry.update(&id, |j| j.start());
            let outcome = match tokio::task::spawn_blocking(work).await {
                Ok(r) => r,
                Err(join) => Err(ApiError::internal(format!("job panicked: {join}"))),
            };
            let outcome = outcome.map_err(|e| e.body);
            match &outcome {
                Ok(_) => tracing::info!(job = %id, "job succeeded"),
                Err(e) => tracing::warn!(job = %id, kind = %e.kind, detail = %e.detail, "job failed"),
            }
            registry.update(&id, |j| j.finish(outcome));
        });
        Ok(job)
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job) -> Result<(), IllegalTransition>) {
        let mut t = self.lock();
        let Some(job) = t.jobs.get_mut(id) else { return };
        if let Err(e) = f(job) {
            tracing::error!(job = id, %e, "ignored illegal job transition");
        }
        if job.state.is_terminal() {
            if let Some(sid) = job.session_id.clone() {
                t.busy.remove(&sid);
            }
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Table> {
        self.table.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_forward_transitions() {
        let mut j = Job::new(JobKind::Describe, None);
        assert!(j.finish(Ok(JobResult::Dataset { dataset_id: "d".into() })).is_err());
        j.start().unwrap();
        assert!(j.start().is_err());
        j.finish(Err(ErrorBody { kind: "Transient".into(), detail: "x".into() })).unwrap();
        let frozen = j.clone();
        assert!(j.start().is_err());
        assert!(j.finish(Ok(JobResult::Dataset { dataset_id: "d".into() })).is_err());
        assert_eq!(j, frozen);
    }

    #[test]
    fn wire_names() {
        let j = Job::new(JobKind::DatasetBuild, Some("s".into()));
        let v = serde_json::to_value(&j).unwrap();
        assert_eq!(v["kind"], "dataset_build");
        assert_eq!(v["state"], "queued");
        let r = serde_json::to_value(JobResult::Session { session_id: "s".into(), stage: Stage::Described }).unwrap();
        assert_eq!(r, serde_json::json!({"type": "session", "session_id": "s", "stage": "Described"}));
    }
}
