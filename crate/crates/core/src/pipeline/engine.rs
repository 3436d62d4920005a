use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::Utc;

use super::session::{apply, fold, SessionEvent};
use super::{
    BackendFailure, CandidateImage, DesignSession, ImageOrigin, Iteration, MeshCandidate, Operation, PipelineError,
    PostProcessResult, PromptRevision,
};
use crate::config::PipelineConfig;
use crate::gateway::{Gateway, GatewayError};
use crate::imaging;
use crate::mesh::{self, PlyEncoding, RepairPlan};
use crate::metrics::{clip_score, EmbeddingVector};
use crate::store::{ContentHash, Store};

/// Drives design sessions through their stages.
///
/// Every operation holds a per-session lock for its whole duration, loads
/// the session by folding its log, performs provider work, then appends a
/// single event with an expected-version check (which also catches writers
/// in other processes) and applies that same event to produce the
/// returned state.
pub struct Pipeline {
    store: Store,
    gateway: Gateway,
    cfg: PipelineConfig,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("root", &self.store.root()).field("gateway", &self.gateway).finish()
    }
}

impl Pipeline {
    pub fn new(store: Store, gateway: Gateway, cfg: PipelineConfig) -> Self {
        Self { store, gateway, cfg, locks: Mutex::new(HashMap::new()) }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        map.entry(id.to_owned()).or_default().clone()
    }

    /// Current state, folded from the log.
    pub fn load(&self, id: &str) -> Result<DesignSession, PipelineError> {
        let records = self.store.events.load(id)?;
        fold(&records).map_err(|e| PipelineError::Corrupt(e.to_string()))
    }

    /// Loads the session and checks that `op` may run from its stage.
    pub fn check(&self, id: &str, op: Operation) -> Result<DesignSession, PipelineError> {
        let s = self.load(id)?;
        if !op.allowed(s.stage) {
            return Err(PipelineError::InvalidState { stage: s.stage, operation: op });
        }
        Ok(s)
    }

    fn transact<R>(
        &self,
        id: &str,
        op: Operation,
        work: impl FnOnce(&DesignSession) -> Result<(SessionEvent, R), PipelineError>,
    ) -> Result<(DesignSession, R), PipelineError> {
        let lock = self.session_lock(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let current = self.check(id, op)?;
        let (event, out) = work(&current)?;
        let version = current.version;
        let seq = self.store.events.append(id, event.event_type(), event.payload(), Some(version))?;
        let next = apply(Some(current), &event, seq).map_err(|e| PipelineError::Corrupt(e.to_string()))?;
        tracing::info!(session = id, ?op, stage = ?next.stage, version = next.version, "session advanced");
        Ok((next, out))
    }

    pub fn create_session(&self, sketch: &[u8], user_note: &str) -> Result<DesignSession, PipelineError> {
        imaging::decode(sketch).map_err(|e| PipelineError::UnsupportedImage(e.0))?;
        let hash = self.store.blobs.put(sketch)?;
        let id = uuid::Uuid::new_v4().to_string();
        let event = SessionEvent::SessionCreated {
            id: id.clone(),
            created_at: Utc::now(),
            sketch: hash,
            user_note: user_note.to_owned(),
        };
        let seq = self.store.events.append(&id, event.event_type(), event.payload(), Some(0))?;
        let s = apply(None, &event, seq).map_err(|e| PipelineError::Corrupt(e.to_string()))?;
        tracing::info!(session = %id, "session created");
        Ok(s)
    }

    pub fn advance_describe(&self, id: &str) -> Result<PromptRevision, PipelineError> {
        let (s, _) = self.transact(id, Operation::Describe, |s| {
            let sketch = self.store.blobs.get(&s.sketch)?;
            let r = self.gateway.describe(&sketch, &s.user_note)?;
            Ok((SessionEvent::Described { description: r.description, generation_prompt: r.generation_prompt }, ()))
        })?;
        Ok(s.current_revision().cloned().expect("described session has a revision"))
    }

    pub fn edit_description(&self, id: &str, new_text: &str) -> Result<PromptRevision, PipelineError> {
        if new_text.trim().is_empty() {
            return Err(PipelineError::EmptyText);
        }
        let (s, _) = self.transact(id, Operation::EditDescription, |_| {
            Ok((SessionEvent::DescriptionEdited { text: new_text.to_owned() }, ()))
        })?;
        Ok(s.current_revision().cloned().expect("edited session has a revision"))
    }

    fn generate(&self, prompt: &str, count: usize) -> Result<Vec<CandidateImage>, PipelineError> {
        let images = self.gateway.text_to_images(prompt, count)?;
        images
            .into_iter()
            .map(|img| {
                Ok(CandidateImage {
                    blob: self.store.blobs.put(&img.bytes)?,
                    revised_prompt: img.revised_prompt,
                    contains_text: false,
                    origin: ImageOrigin::TextToImage,
                })
            })
            .collect()
    }

    pub fn advance_images(&self, id: &str, count: usize) -> Result<Vec<CandidateImage>, PipelineError> {
        if count == 0 {
            return Err(PipelineError::InvalidCount);
        }
        let (_, images) = self.transact(id, Operation::AdvanceImages, |s| {
            let prompt = &s.current().expect("stage implies an iteration").prompt.text;
            let images = self.generate(prompt, count)?;
            Ok((SessionEvent::ImagesGenerated { images: images.clone() }, images))
        })?;
        Ok(images)
    }

    pub fn append_feedback(&self, id: &str, feedback: &str, count: usize) -> Result<Iteration, PipelineError> {
        if feedback.trim().is_empty() {
            return Err(PipelineError::EmptyText);
        }
        if count == 0 {
            return Err(PipelineError::InvalidCount);
        }
        let (s, _) = self.transact(id, Operation::AppendFeedback, |s| {
            let parent = s.current_revision().expect("stage implies a revision");
            let text = format!("{} {}", parent.text, feedback);
            let images = self.generate(&text, count)?;
            Ok((SessionEvent::FeedbackAppended { feedback: feedback.to_owned(), images }, ()))
        })?;
        Ok(s.current().cloned().expect("feedback opens an iteration"))
    }

    /// Sets the contains-text flag of every image in the current iteration.
    pub fn flag_images(&self, id: &str, contains_text: &[bool]) -> Result<DesignSession, PipelineError> {
        let (s, _) = self.transact(id, Operation::FlagImages, |s| {
            let it = s.current().expect("stage implies an iteration");
            check_flags(it, contains_text)?;
            if let Some(sel) = it.selected_image {
                if contains_text[sel] {
                    return Err(PipelineError::TextFlaggedImage(sel));
                }
            }
            Ok((SessionEvent::ImagesFlagged { contains_text: contains_text.to_vec() }, ()))
        })?;
        Ok(s)
    }

    /// Selects an image; `contains_text`, when given, replaces all flags of
    /// the current iteration in the same event.
    pub fn select_image(&self, id: &str, index: usize, contains_text: Option<&[bool]>) -> Result<DesignSession, PipelineError> {
        let (s, _) = self.transact(id, Operation::SelectImage, |s| {
            let it = s.current().expect("stage implies an iteration");
            if index >= it.images.len() {
                return Err(PipelineError::IndexOutOfRange { index, len: it.images.len() });
            }
            if let Some(flags) = contains_text {
                check_flags(it, flags)?;
            }
            let flagged = contains_text.map_or(it.images[index].contains_text, |f| f[index]);
            if flagged {
                return Err(PipelineError::TextFlaggedImage(index));
            }
            Ok((SessionEvent::ImageSelected { index, contains_text: contains_text.map(<[bool]>::to_vec) }, ()))
        })?;
        Ok(s)
    }

    /// Backends used when a caller names none.
    pub fn default_backends(&self) -> Vec<String> {
        if self.cfg.mesh_backends.is_empty() {
            self.gateway.backends().to_vec()
        } else {
            self.cfg.mesh_backends.clone()
        }
    }

    /// Runs each backend on the selected image. Individual failures are
    /// recorded; only a total failure aborts.
    pub fn advance_mesh(&self, id: &str, backends: &[String]) -> Result<Vec<MeshCandidate>, PipelineError> {
        let backends = if backends.is_empty() { self.default_backends() } else { backends.to_vec() };
        if backends.is_empty() {
            return Err(PipelineError::InvalidArgument("no mesh backends configured".into()));
        }
        if let Some(unknown) = backends.iter().find(|b| !self.gateway.backends().contains(b)) {
            return Err(PipelineError::UnknownBackend(unknown.clone()));
        }
        let (_, candidates) = self.transact(id, Operation::AdvanceMesh, |s| {
            let image = self.store.blobs.get(&s.selected_image().expect("stage implies a selection").blob)?;
            let image_embedding = self.gateway.embed_image(&image).map_err(|e| tracing::warn!(%e, "image embedding failed")).ok();
            let results = self.cfg.exec.map(&backends, |b| self.mesh_candidate(&image, b, image_embedding.as_ref()));
            let mut candidates = Vec::new();
            let mut failures = Vec::new();
            for (backend, r) in backends.iter().zip(results) {
                match r {
                    Ok(c) => candidates.push(c),
                    Err(e) => {
                        tracing::warn!(backend = %backend, error = %e, "mesh backend failed");
                        failures.push(BackendFailure {
                            backend: backend.clone(),
                            kind: e.kind().to_owned(),
                            detail: e.to_string(),
                        });
                    }
                }
            }
            if candidates.is_empty() {
                return Err(PipelineError::AllBackendsFailed(failures));
            }
            Ok((SessionEvent::MeshGenerated { candidates: candidates.clone(), failures }, candidates))
        })?;
        Ok(candidates)
    }

    /// Generates, stores and analyzes one backend's mesh for `image`.
    pub fn mesh_candidate(
        &self,
        image: &[u8],
        backend: &str,
        image_embedding: Option<&EmbeddingVector>,
    ) -> Result<MeshCandidate, PipelineError> {
        let ply = self.gateway.image_to_mesh(image, backend)?;
        let parsed = mesh::parse_ply(&ply).map_err(|e| PipelineError::MeshParse(e.to_string()))?;
        let report = mesh::analyze(&parsed);
        let blob = self.store.blobs.put(&ply)?;
        let similarity_to_image = image_embedding.and_then(|emb| self.preview_similarity(&parsed, emb));
        Ok(MeshCandidate { backend: backend.to_owned(), blob, report, similarity_to_image })
    }

    fn preview_similarity(&self, m: &mesh::TriangleMesh, image_embedding: &EmbeddingVector) -> Option<f64> {
        let preview = image::DynamicImage::ImageLuma8(mesh::render_preview(m, self.cfg.preview_size)).to_rgb8();
        let png = imaging::encode_png(&preview, &[]);
        let emb = self.gateway.embed_image(&png).ok()?;
        clip_score(&emb, image_embedding).ok().map(|s| s.value())
    }

    pub fn select_mesh(&self, id: &str, index: usize) -> Result<DesignSession, PipelineError> {
        let (s, _) = self.transact(id, Operation::SelectMesh, |s| {
            let len = s.current().expect("stage implies an iteration").mesh_candidates.len();
            if index >= len {
                return Err(PipelineError::IndexOutOfRange { index, len });
            }
            Ok((SessionEvent::MeshSelected { index }, ()))
        })?;
        Ok(s)
    }

    /// Applies `plan` to the selected mesh and stores the repaired mesh.
    pub fn postprocess(&self, id: &str, plan: &RepairPlan) -> Result<PostProcessResult, PipelineError> {
        plan.validate().map_err(|e| PipelineError::InvalidArgument(e.to_string()))?;
        let (_, result) = self.transact(id, Operation::PostProcess, |s| {
            let ply = self.store.blobs.get(&s.selected_mesh().expect("stage implies a selection").blob)?;
            let parsed = mesh::parse_ply(&ply).map_err(|e| PipelineError::MeshParse(e.to_string()))?;
            let (repaired, report) = mesh::apply_plan(&parsed, plan).map_err(|e| PipelineError::MeshParse(e.to_string()))?;
            if !report.printable {
                tracing::warn!(session = id, ?report, "repaired mesh is not printable; exporting anyway");
            }
            let blob = self.store.blobs.put(&mesh::write_ply(&repaired, PlyEncoding::BinaryF64))?;
            let result = PostProcessResult { plan: *plan, mesh: blob, report };
            Ok((SessionEvent::PostProcessed { result: result.clone() }, result))
        })?;
        Ok(result)
    }

    /// Writes the repaired mesh as binary STL.
    pub fn export(&self, id: &str) -> Result<ContentHash, PipelineError> {
        let (_, stl) = self.transact(id, Operation::Export, |s| {
            let result = s.postprocess.as_ref().expect("stage implies a postprocess result");
            let repaired =
                mesh::parse_ply(&self.store.blobs.get(&result.mesh)?).map_err(|e| PipelineError::MeshParse(e.to_string()))?;
            let bytes = mesh::write_stl(&repaired).map_err(|e| PipelineError::MeshParse(e.to_string()))?;
            let stl = self.store.blobs.put(&bytes)?;
            Ok((SessionEvent::Exported { stl: stl.clone() }, stl))
        })?;
        Ok(stl)
    }

    /// [`Pipeline::postprocess`] then [`Pipeline::export`].
    pub fn postprocess_and_export(&self, id: &str, plan: &RepairPlan) -> Result<ContentHash, PipelineError> {
        self.postprocess(id, plan)?;
        self.export(id)
    }
}

fn check_flags(it: &Iteration, flags: &[bool]) -> Result<(), PipelineError> {
    if flags.len() != it.images.len() {
        return Err(PipelineError::InvalidArgument(format!("{} flags for {} images", flags.len(), it.images.len())));
    }
    Ok(())
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidInput(s) => PipelineError::InvalidArgument(s),
            GatewayError::UnsupportedImage(s) => PipelineError::UnsupportedImage(s),
            GatewayError::UnknownBackend(s) => PipelineError::UnknownBackend(s),
            GatewayError::Provider(p) => PipelineError::Provider(p),
        }
    }
}
