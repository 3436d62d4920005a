//! Provider abstraction over the four generative capabilities (sketch
//! description, text-to-image, sketch-guided images, image-to-mesh) plus
//! embeddings.
//!
//! [`Gateway`] validates inputs and outputs, wraps every provider call in
//! the retry policy and keeps mesh backends in a named registry. Mock
//! providers are pure functions of (seed, inputs); live providers speak
//! HTTP+JSON and classify every failure into a [`ProviderErrorKind`].

mod error;
mod live;
mod mock;
mod ratelimit;
mod retry;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use error::{classify_status, classify_transport, mentions_safety, ProviderError, ProviderErrorKind, TransportFailure};
pub use live::{redact, LiveClient, LiveDescriber, LiveEmbedder, LiveGuided, LiveMeshBackend, LiveTextToImage};
pub use mock::{Defects, MockMeshBackend, MockProvider};
pub use ratelimit::{RateLimitConfig, TokenBucket};
pub use retry::{call_with_retry, NoSleep, RetryOutcome, RetryPolicy, Sleeper, ThreadSleeper};

use crate::config::{Capability, ProviderConfig, ProviderMode};
use crate::imaging;
use crate::metrics::{DeterministicEmbedder, EmbedError, Embedder, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeResult {
    pub description: String,
    pub generation_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedImage {
    #[serde(with = "crate::store::b64")]
    pub bytes: Vec<u8>,
    pub revised_prompt: String,
}

pub trait Describer: Send + Sync {
    fn describe(&self, sketch: &[u8], note: &str) -> Result<DescribeResult, ProviderError>;
}

pub trait TextToImage: Send + Sync {
    fn text_to_images(&self, prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, ProviderError>;
}

pub trait SketchGuided: Send + Sync {
    fn sketch_guided_images(&self, sketch: &[u8], prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, ProviderError>;
}

/// Image-to-3D backend. Returns PLY bytes.
pub trait MeshBackend: Send + Sync {
    fn image_to_mesh(&self, image: &[u8]) -> Result<Vec<u8>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported image: {0}")]
    UnsupportedImage(String),
    #[error("unknown mesh backend {0:?}")]
    UnknownBackend(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl From<EmbedError> for GatewayError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Provider(p) => GatewayError::Provider(p),
            EmbedError::UnsupportedImage(s) => GatewayError::UnsupportedImage(s),
            other => GatewayError::InvalidInput(other.to_string()),
        }
    }
}

/// Minimum edge length for generated images.
pub const MIN_IMAGE_SIDE: u32 = 64;

/// Entry point for all provider calls.
#[derive(Clone)]
pub struct Gateway {
    describer: Arc<dyn Describer>,
    text_to_image: Arc<dyn TextToImage>,
    guided: Arc<dyn SketchGuided>,
    meshers: BTreeMap<String, Arc<dyn MeshBackend>>,
    backend_order: Vec<String>,
    embedder: Arc<dyn Embedder>,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("backends", &self.backend_order).field("retry", &self.retry).finish()
    }
}

impl Gateway {
    /// Mock providers for everything, seeded with `seed`.
    pub fn mock(seed: u64) -> Self {
        Self::from_config(&ProviderConfig { seed, ..ProviderConfig::default() }).expect("default mock configuration is valid")
    }

    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, GatewayError> {
        cfg.retry.validate().map_err(GatewayError::InvalidInput)?;
        let mock = Arc::new(MockProvider::new(cfg.seed, &cfg.mock));
        let needs_live = Capability::ALL.iter().any(|&c| cfg.mode_for(c) == ProviderMode::Live);
        let live = if needs_live { Some(Arc::new(LiveClient::new(&cfg.live, &cfg.rate_limit))) } else { None };
        let live_client = || live.clone().expect("live client built when any capability is live");

        let describer: Arc<dyn Describer> = match cfg.mode_for(Capability::Describe) {
            ProviderMode::Mock => mock.clone(),
            ProviderMode::Live => Arc::new(LiveDescriber::new(live_client())),
        };
        let text_to_image: Arc<dyn TextToImage> = match cfg.mode_for(Capability::Images) {
            ProviderMode::Mock => mock.clone(),
            ProviderMode::Live => Arc::new(LiveTextToImage::new(live_client())),
        };
        let guided: Arc<dyn SketchGuided> = match cfg.mode_for(Capability::Guided) {
            ProviderMode::Mock => mock.clone(),
            ProviderMode::Live => Arc::new(LiveGuided::new(live_client())),
        };
        let embedder: Arc<dyn Embedder> = match cfg.mode_for(Capability::Embed) {
            ProviderMode::Mock => Arc::new(DeterministicEmbedder),
            ProviderMode::Live => Arc::new(LiveEmbedder::new(live_client())),
        };
        let mut meshers: BTreeMap<String, Arc<dyn MeshBackend>> = BTreeMap::new();
        let mut backend_order = Vec::new();
        match cfg.mode_for(Capability::Mesh) {
            ProviderMode::Mock => {
                for spec in &cfg.mock.mesh_backends {
                    meshers.insert(spec.name.clone(), Arc::new(MockMeshBackend::new(cfg.seed, spec)));
                    backend_order.push(spec.name.clone());
                }
            }
            ProviderMode::Live => {
                for name in &cfg.live.mesh_backends {
                    meshers.insert(name.clone(), Arc::new(LiveMeshBackend::new(live_client(), name)));
                    backend_order.push(name.clone());
                }
            }
        }
        Ok(Self {
            describer,
            text_to_image,
            guided,
            meshers,
            backend_order,
            embedder,
            retry: cfg.retry.clone(),
            sleeper: Arc::new(ThreadSleeper),
        })
    }

    pub fn with_describer(mut self, d: Arc<dyn Describer>) -> Self {
        self.describer = d;
        self
    }

    pub fn with_text_to_image(mut self, p: Arc<dyn TextToImage>) -> Self {
        self.text_to_image = p;
        self
    }

    pub fn with_guided(mut self, p: Arc<dyn SketchGuided>) -> Self {
        self.guided = p;
        self
    }

    pub fn with_embedder(mut self, e: Arc<dyn Embedder>) -> Self {
        self.embedder = e;
        self
    }

    /// Registers (or replaces) a mesh backend; new names go last in order.
    pub fn with_mesh_backend(mut self, name: &str, backend: Arc<dyn MeshBackend>) -> Self {
        if self.meshers.insert(name.to_owned(), backend).is_none() {
            self.backend_order.push(name.to_owned());
        }
        self
    }

    /// Keeps only the named backends, in the given order.
    pub fn with_backend_order(mut self, names: &[&str]) -> Result<Self, GatewayError> {
        if let Some(missing) = names.iter().find(|n| !self.meshers.contains_key(**n)) {
            return Err(GatewayError::UnknownBackend((*missing).to_owned()));
        }
        self.backend_order = names.iter().map(|s| (*s).to_owned()).collect();
        self.meshers.retain(|k, _| self.backend_order.contains(k));
        Ok(self)
    }

    pub fn with_retry(mut self, policy: RetryPolicy, sleeper: Arc<dyn Sleeper>) -> Self {
        self.retry = policy;
        self.sleeper = sleeper;
        self
    }

    /// Configured mesh backends in registration order.
    pub fn backends(&self) -> &[String] {
        &self.backend_order
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn embedder_arc(&self) -> Arc<dyn Embedder> {
        self.embedder.clone()
    }

    fn retried<T>(&self, what: &str, op: impl FnMut(u32) -> Result<T, ProviderError>) -> Result<T, GatewayError> {
        let outcome = call_with_retry(&self.retry, self.sleeper.as_ref(), op);
        match &outcome.result {
            Ok(_) if outcome.attempts > 1 => {
                tracing::info!(what, attempts = outcome.attempts, "provider call succeeded after retries")
            }
            Err(e) => tracing::warn!(what, attempts = outcome.attempts, kind = ?e.kind, "provider call failed"),
            _ => {}
        }
        outcome.result.map_err(GatewayError::from)
    }

    pub fn describe(&self, sketch: &[u8], note: &str) -> Result<DescribeResult, GatewayError> {
        check_image(sketch)?;
        let result = self.retried("describe", |_| {
            let r = self.describer.describe(sketch, note)?;
            if r.description.trim().is_empty() || r.generation_prompt.trim().is_empty() {
                return Err(ProviderError::malformed("describe returned an empty field"));
            }
            Ok(r)
        })?;
        Ok(result)
    }

    pub fn text_to_images(&self, prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::InvalidInput("prompt is empty".into()));
        }
        check_count(n)?;
        self.retried("text_to_images", |_| {
            let images = self.text_to_image.text_to_images(prompt, n)?;
            check_batch(&images, n, true)?;
            Ok(images)
        })
    }

    pub fn sketch_guided_images(&self, sketch: &[u8], prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, GatewayError> {
        check_image(sketch)?;
        check_count(n)?;
        self.retried("sketch_guided_images", |_| {
            let images = self.guided.sketch_guided_images(sketch, prompt, n)?;
            check_batch(&images, n, false)?;
            Ok(images)
        })
    }

    pub fn image_to_mesh(&self, image: &[u8], backend: &str) -> Result<Vec<u8>, GatewayError> {
        let mesher = self.meshers.get(backend).ok_or_else(|| GatewayError::UnknownBackend(backend.to_owned()))?;
        check_image(image)?;
        self.retried("image_to_mesh", |_| {
            let ply = mesher.image_to_mesh(image)?;
            crate::mesh::parse_ply(&ply)
                .map_err(|e| ProviderError::malformed(format!("backend {backend} returned bad PLY: {e}")))?;
            Ok(ply)
        })
    }

    pub fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embedder.embed_image(bytes)?)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidInput("text is empty".into()));
        }
        Ok(self.embedder.embed_text(text)?)
    }
}

fn check_image(bytes: &[u8]) -> Result<(), GatewayError> {
    imaging::decode(bytes).map(|_| ()).map_err(|e| GatewayError::UnsupportedImage(e.0))
}

fn check_count(n: usize) -> Result<(), GatewayError> {
    if n == 0 {
        return Err(GatewayError::InvalidInput("image count must be positive".into()));
    }
    Ok(())
}

fn check_batch(images: &[GeneratedImage], n: usize, need_revised: bool) -> Result<(), ProviderError> {
    if images.len() != n {
        return Err(ProviderError::malformed(format!("asked for {n} images, got {}", images.len())));
    }
    for (i, img) in images.iter().enumerate() {
        if !imaging::is_png(&img.bytes) {
            return Err(ProviderError::malformed(format!("image {i} is not a PNG")));
        }
        let decoded = imaging::decode(&img.bytes).map_err(|e| ProviderError::malformed(format!("image {i}: {e}")))?;
        if decoded.width() < MIN_IMAGE_SIDE || decoded.height() < MIN_IMAGE_SIDE {
            return Err(ProviderError::malformed(format!("image {i} is {}x{}", decoded.width(), decoded.height())));
        }
        if need_revised && img.revised_prompt.trim().is_empty() {
            return Err(ProviderError::malformed(format!("image {i} has no revised prompt")));
        }
    }
    Ok(())
}
