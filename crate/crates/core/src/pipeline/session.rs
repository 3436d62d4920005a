use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mesh::{ManufacturabilityReport, RepairPlan};
use crate::store::{ContentHash, EventRecord, EventType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Created,
    Described,
    ImagesGenerated,
    ImageSelected,
    MeshGenerated,
    MeshSelected,
    PostProcessed,
    Exported,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Self::Created,
        Self::Described,
        Self::ImagesGenerated,
        Self::ImageSelected,
        Self::MeshGenerated,
        Self::MeshSelected,
        Self::PostProcessed,
        Self::Exported,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageOrigin {
    TextToImage,
    SketchGuided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRevision {
    /// 1-based.
    pub index: u32,
    pub text: String,
    pub parent: Option<u32>,
    pub appended_feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateImage {
    pub blob: ContentHash,
    pub revised_prompt: String,
    pub contains_text: bool,
    pub origin: ImageOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshCandidate {
    pub backend: String,
    /// PLY bytes as returned by the backend.
    pub blob: ContentHash,
    pub report: ManufacturabilityReport,
    pub similarity_to_image: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendFailure {
    pub backend: String,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    /// 1-based.
    pub index: u32,
    pub prompt: PromptRevision,
    pub images: Vec<CandidateImage>,
    /// 0-based index into `images`.
    pub selected_image: Option<usize>,
    pub mesh_candidates: Vec<MeshCandidate>,
    pub mesh_failures: Vec<BackendFailure>,
    /// 0-based index into `mesh_candidates`.
    pub selected_mesh: Option<usize>,
}

impl Iteration {
    fn new(index: u32, prompt: PromptRevision) -> Self {
        Self {
            index,
            prompt,
            images: Vec::new(),
            selected_image: None,
            mesh_candidates: Vec::new(),
            mesh_failures: Vec::new(),
            selected_mesh: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostProcessResult {
    pub plan: RepairPlan,
    /// Repaired mesh as binary PLY (64-bit coordinates).
    pub mesh: ContentHash,
    pub report: ManufacturabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSession {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub sketch: ContentHash,
    pub user_note: String,
    pub description: Option<String>,
    /// Every prompt revision ever made, in order.
    pub revisions: Vec<PromptRevision>,
    pub iterations: Vec<Iteration>,
    pub stage: Stage,
    /// Number of events in the log.
    pub version: u64,
    pub postprocess: Option<PostProcessResult>,
    pub export: Option<ContentHash>,
}

impl DesignSession {
    pub fn current(&self) -> Option<&Iteration> {
        self.iterations.last()
    }

    fn current_mut(&mut self) -> Result<&mut Iteration, FoldError> {
        self.iterations.last_mut().ok_or(FoldError("event needs an iteration but there is none"))
    }

    pub fn current_revision(&self) -> Option<&PromptRevision> {
        self.revisions.last()
    }

    pub fn selected_image(&self) -> Option<&CandidateImage> {
        let it = self.current()?;
        it.images.get(it.selected_image?)
    }

    pub fn selected_mesh(&self) -> Option<&MeshCandidate> {
        let it = self.current()?;
        it.mesh_candidates.get(it.selected_mesh?)
    }
}

/// Event payloads. Serialized adjacently tagged so that `type` and
/// `payload` map one-to-one onto the log's record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum SessionEvent {
    SessionCreated { id: String, created_at: DateTime<Utc>, sketch: ContentHash, user_note: String },
    Described { description: String, generation_prompt: String },
    DescriptionEdited { text: String },
    ImagesGenerated { images: Vec<CandidateImage> },
    FeedbackAppended { feedback: String, images: Vec<CandidateImage> },
    ImagesFlagged { contains_text: Vec<bool> },
    ImageSelected { index: usize, contains_text: Option<Vec<bool>> },
    MeshGenerated { candidates: Vec<MeshCandidate>, failures: Vec<BackendFailure> },
    MeshSelected { index: usize },
    PostProcessed { result: PostProcessResult },
    Exported { stl: ContentHash },
}

impl SessionEvent {
    pub fn event_type(&self) -> EventType {
        match self {
            Self::SessionCreated { .. } => EventType::SessionCreated,
            Self::Described { .. } => EventType::Described,
            Self::DescriptionEdited { .. } => EventType::DescriptionEdited,
            Self::ImagesGenerated { .. } => EventType::ImagesGenerated,
            Self::FeedbackAppended { .. } => EventType::FeedbackAppended,
            Self::ImagesFlagged { .. } => EventType::ImagesFlagged,
            Self::ImageSelected { .. } => EventType::ImageSelected,
            Self::MeshGenerated { .. } => EventType::MeshGenerated,
            Self::MeshSelected { .. } => EventType::MeshSelected,
            Self::PostProcessed { .. } => EventType::PostProcessed,
            Self::Exported { .. } => EventType::Exported,
        }
    }

    pub fn payload(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("session events serialize");
        v.get_mut("payload").map(Value::take).unwrap_or(Value::Null)
    }

    pub fn from_record(rec: &EventRecord) -> Result<Self, FoldError> {
        let tagged = serde_json::json!({"type": rec.kind.as_str(), "payload": rec.payload});
        serde_json::from_value(tagged).map_err(|_| FoldError("payload does not match its event type"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot fold event: {0}")]
pub struct FoldError(pub &'static str);

/// Applies one event. The engine validates operations before appending, so
/// this only rejects logs that could not have been produced by it.
pub fn apply(state: Option<DesignSession>, event: &SessionEvent, seq: u64) -> Result<DesignSession, FoldError> {
    let mut s = match (state, event) {
        (None, SessionEvent::SessionCreated { id, created_at, sketch, user_note }) => {
            return Ok(DesignSession {
                id: id.clone(),
                created_at: *created_at,
                sketch: sketch.clone(),
                user_note: user_note.clone(),
                description: None,
                revisions: Vec::new(),
                iterations: Vec::new(),
                stage: Stage::Created,
                version: seq,
                postprocess: None,
                export: None,
            });
        }
        (None, _) => return Err(FoldError("first event must be SessionCreated")),
        (Some(_), SessionEvent::SessionCreated { .. }) => return Err(FoldError("duplicate SessionCreated")),
        (Some(s), _) => s,
    };
    match event {
        SessionEvent::SessionCreated { .. } => unreachable!("handled above"),
        SessionEvent::Described { description, generation_prompt } => {
            let rev = PromptRevision { index: 1, text: generation_prompt.clone(), parent: None, appended_feedback: None };
            s.description = Some(description.clone());
            s.revisions = vec![rev.clone()];
            s.iterations = vec![Iteration::new(1, rev)];
            s.stage = Stage::Described;
        }
        SessionEvent::DescriptionEdited { text } => {
            let parent = s.current_revision().ok_or(FoldError("edit before describe"))?.index;
            let rev = PromptRevision { index: parent + 1, text: text.clone(), parent: Some(parent), appended_feedback: None };
            s.revisions.push(rev.clone());
            let it = s.current_mut()?;
            if it.images.is_empty() {
                it.prompt = rev;
            } else {
                let next = it.index + 1;
                s.iterations.push(Iteration::new(next, rev));
            }
            s.postprocess = None;
            s.export = None;
            s.stage = Stage::Described;
        }
        SessionEvent::ImagesGenerated { images } => {
            if matches!(s.stage, Stage::ImagesGenerated | Stage::ImageSelected) {
                let it = s.current().ok_or(FoldError("images before describe"))?;
                let (next, prompt) = (it.index + 1, it.prompt.clone());
                s.iterations.push(Iteration::new(next, prompt));
            }
            s.current_mut()?.images.extend(images.iter().cloned());
            s.stage = Stage::ImagesGenerated;
        }
        SessionEvent::FeedbackAppended { feedback, images } => {
            let parent = s.current_revision().ok_or(FoldError("feedback before describe"))?.clone();
            let rev = PromptRevision {
                index: parent.index + 1,
                text: format!("{} {}", parent.text, feedback),
                parent: Some(parent.index),
                appended_feedback: Some(feedback.clone()),
            };
            s.revisions.push(rev.clone());
            let next = s.current().map_or(1, |it| it.index + 1);
            let mut it = Iteration::new(next, rev);
            it.images = images.clone();
            s.iterations.push(it);
            s.stage = Stage::ImagesGenerated;
        }
        SessionEvent::ImagesFlagged { contains_text } => {
            apply_flags(s.current_mut()?, contains_text)?;
        }
        SessionEvent::ImageSelected { index, contains_text } => {
            let it = s.current_mut()?;
            // Re-selection replaces the old choice, so the old one must not
            // block flagging.
            it.selected_image = None;
            if let Some(flags) = contains_text {
                apply_flags(it, flags)?;
            }
            let img = it.images.get(*index).ok_or(FoldError("selected image out of range"))?;
            if img.contains_text {
                return Err(FoldError("selected image is flagged as containing text"));
            }
            it.selected_image = Some(*index);
            s.stage = Stage::ImageSelected;
        }
        SessionEvent::MeshGenerated { candidates, failures } => {
            let it = s.current_mut()?;
            it.mesh_candidates = candidates.clone();
            it.mesh_failures = failures.clone();
            it.selected_mesh = None;
            s.stage = Stage::MeshGenerated;
        }
        SessionEvent::MeshSelected { index } => {
            let it = s.current_mut()?;
            if *index >= it.mesh_candidates.len() {
                return Err(FoldError("selected mesh out of range"));
            }
            it.selected_mesh = Some(*index);
            s.stage = Stage::MeshSelected;
        }
        SessionEvent::PostProcessed { result } => {
            s.postprocess = Some(result.clone());
            s.stage = Stage::PostProcessed;
        }
        SessionEvent::Exported { stl } => {
            s.export = Some(stl.clone());
            s.stage = Stage::Exported;
        }
    }
    s.version = seq;
    Ok(s)
}

fn apply_flags(it: &mut Iteration, flags: &[bool]) -> Result<(), FoldError> {
    if flags.len() != it.images.len() {
        return Err(FoldError("flag list length differs from image count"));
    }
    if let Some(sel) = it.selected_image {
        if flags[sel] {
            return Err(FoldError("cannot flag the selected image"));
        }
    }
    for (img, &f) in it.images.iter_mut().zip(flags) {
        img.contains_text = f;
    }
    Ok(())
}

/// Folds a complete log into a session.
pub fn fold(records: &[EventRecord]) -> Result<DesignSession, FoldError> {
    let mut state = None;
    for rec in records {
        state = Some(apply(state, &SessionEvent::from_record(rec)?, rec.seq)?);
    }
    state.ok_or(FoldError("empty log"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn created() -> SessionEvent {
        SessionEvent::SessionCreated {
            id: "s".into(),
            created_at: DateTime::from_timestamp(0, 0).unwrap(),
            sketch: ContentHash::of(b"sketch"),
            user_note: String::new(),
        }
    }

    fn image(tag: &str) -> CandidateImage {
        CandidateImage {
            blob: ContentHash::of(tag.as_bytes()),
            revised_prompt: tag.into(),
            contains_text: false,
            origin: ImageOrigin::TextToImage,
        }
    }

    fn run(events: &[SessionEvent]) -> Result<DesignSession, FoldError> {
        let mut s = None;
        for (i, e) in events.iter().enumerate() {
            s = Some(apply(s, e, i as u64 + 1)?);
        }
        Ok(s.unwrap())
    }

    #[test]
    fn payload_roundtrip() {
        let e = SessionEvent::ImageSelected { index: 2, contains_text: Some(vec![true, false, false]) };
        let rec = EventRecord { seq: 1, ts: Utc::now(), kind: e.event_type(), payload: e.payload() };
        assert_eq!(SessionEvent::from_record(&rec).unwrap(), e);
    }

    #[test]
    fn feedback_concatenates_and_opens_iteration() {
        let s = run(&[
            created(),
            SessionEvent::Described { description: "d".into(), generation_prompt: "A frother".into() },
            SessionEvent::ImagesGenerated { images: vec![image("a")] },
            SessionEvent::FeedbackAppended { feedback: "made of wood".into(), images: vec![image("b")] },
            SessionEvent::FeedbackAppended { feedback: "like a saloon".into(), images: vec![image("c")] },
        ])
        .unwrap();
        assert_eq!(s.iterations.len(), 3);
        let rev = &s.iterations[2].prompt;
        assert_eq!((rev.index, rev.parent), (3, Some(2)));
        assert_eq!(rev.text, "A frother made of wood like a saloon");
        assert_eq!(s.version, 5);
    }

    #[test]
    fn edit_replaces_prompt_only_when_no_images() {
        let s = run(&[
            created(),
            SessionEvent::Described { description: "d".into(), generation_prompt: "p1".into() },
            SessionEvent::DescriptionEdited { text: "p2".into() },
        ])
        .unwrap();
        assert_eq!(s.iterations.len(), 1);
        assert_eq!(s.iterations[0].prompt.index, 2);
        let s = run(&[
            created(),
            SessionEvent::Described { description: "d".into(), generation_prompt: "p1".into() },
            SessionEvent::ImagesGenerated { images: vec![image("a")] },
            SessionEvent::DescriptionEdited { text: "p2".into() },
        ])
        .unwrap();
        assert_eq!(s.iterations.len(), 2);
        assert_eq!(s.stage, Stage::Described);
    }

    #[test]
    fn flagged_selection_is_unrepresentable() {
        let base = vec![
            created(),
            SessionEvent::Described { description: "d".into(), generation_prompt: "p".into() },
            SessionEvent::ImagesGenerated { images: vec![image("a"), image("b")] },
        ];
        let mut bad = base.clone();
        bad.push(SessionEvent::ImageSelected { index: 0, contains_text: Some(vec![true, false]) });
        assert!(run(&bad).is_err());
        let mut bad = base.clone();
        bad.push(SessionEvent::ImageSelected { index: 1, contains_text: None });
        bad.push(SessionEvent::ImagesFlagged { contains_text: vec![false, true] });
        assert!(run(&bad).is_err());
    }

    #[test]
    fn must_start_with_creation() {
        assert!(apply(None, &SessionEvent::MeshSelected { index: 0 }, 1).is_err());
    }
}
