use std::io::ErrorKind;
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use super::error::{classify_status, classify_transport, mentions_safety, TransportFailure};
use super::ratelimit::{RateLimitConfig, TokenBucket};
use super::{DescribeResult, Describer, GeneratedImage, MeshBackend, ProviderError, SketchGuided, TextToImage};
use crate::config::{LiveAdapter, LiveConfig};
use crate::metrics::{EmbedError, Embedder, EmbeddingVector};

/// Replaces every occurrence of `secret` in `text`.
pub fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if s.len() >= 4 => text.replace(s, "[REDACTED]"),
        _ => text.to_owned(),
    }
}

/// Shared HTTP+JSON transport for the live providers. One token bucket per
/// client; each live capability gets its own client.
#[derive(Debug)]
pub struct LiveClient {
    agent: ureq::Agent,
    mesh_agent: ureq::Agent,
    cfg: LiveConfig,
    limiter: TokenBucket,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into()
}

impl LiveClient {
    pub fn new(cfg: &LiveConfig, limit: &RateLimitConfig) -> Self {
        Self {
            agent: agent(Duration::from_secs(cfg.timeout_secs)),
            mesh_agent: agent(Duration::from_secs(cfg.mesh_timeout_secs)),
            cfg: cfg.clone(),
            limiter: TokenBucket::new(limit),
        }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.cfg
    }

    fn url(&self, base: Option<&String>, path: &str) -> String {
        let base = base.unwrap_or(&self.cfg.base_url);
        format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
    }

    /// POSTs `body` and returns the parsed JSON response, classifying every
    /// failure into a [`ProviderError`].
    pub fn post_json(&self, base: Option<&String>, path: &str, body: &Value, mesh: bool) -> Result<Value, ProviderError> {
        self.limiter.acquire();
        let url = self.url(base, path);
        let key = self.cfg.api_key.as_deref();
        tracing::debug!(%url, auth = key.map(|_| "Bearer [REDACTED]"), "live provider request");
        let agent = if mesh { &self.mesh_agent } else { &self.agent };
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(k) = key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| transport_error(&e, key))?;
        let status = resp.status().as_u16();
        let text =
            resp.body_mut().with_config().limit(256 * 1024 * 1024).read_to_string().map_err(|e| transport_error(&e, key))?;
        tracing::debug!(%url, status, bytes = text.len(), "live provider response");
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &redact(&text, key)));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::malformed(format!("unparseable response body: {e}")))?;
        if let Some((text, explicit)) = refusal_text(&value) {
            return Err(if explicit || mentions_safety(&text) {
                ProviderError::safety(text)
            } else {
                ProviderError::malformed(text)
            });
        }
        Ok(value)
    }
}

/// Error or refusal text carried inside a 2xx body; the flag is true for
/// explicit model refusals, which are always policy rejections.
fn refusal_text(v: &Value) -> Option<(String, bool)> {
    let explicit = v
        .get("refusal")
        .or_else(|| v.pointer("/choices/0/message/refusal"))
        .filter(|r| !r.is_null())
        .map(|r| format!("refusal: {}", r.as_str().map(str::to_owned).unwrap_or_else(|| r.to_string())))
        .or_else(|| {
            (v.pointer("/choices/0/finish_reason").and_then(Value::as_str) == Some("content_filter"))
                .then(|| "finish_reason content_filter".to_owned())
        });
    if let Some(text) = explicit {
        return Some((text, true));
    }
    v.get("error").filter(|e| !e.is_null()).map(|e| (e.to_string(), false))
}

fn transport_error(e: &ureq::Error, key: Option<&str>) -> ProviderError {
    let detail = redact(&e.to_string(), key);
    let failure = match e {
        ureq::Error::Timeout(_) => TransportFailure::Timeout,
        ureq::Error::ConnectionFailed => TransportFailure::ConnectFailed,
        ureq::Error::HostNotFound => TransportFailure::HostNotFound,
        ureq::Error::Io(io) => match io.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => TransportFailure::Timeout,
            ErrorKind::ConnectionRefused | ErrorKind::AddrNotAvailable | ErrorKind::NotConnected => {
                TransportFailure::ConnectFailed
            }
            _ => TransportFailure::ConnectionReset,
        },
        ureq::Error::BodyStalled => TransportFailure::Timeout,
        _ => TransportFailure::Protocol,
    };
    classify_transport(failure, &detail)
}

fn str_field(v: &Value, ptr: &str) -> Result<String, ProviderError> {
    v.pointer(ptr)
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ProviderError::malformed(format!("response lacks string at {ptr}")))
}

fn b64_field(v: &Value, ptr: &str) -> Result<Vec<u8>, ProviderError> {
    B64.decode(str_field(v, ptr)?).map_err(|e| ProviderError::malformed(format!("bad base64 at {ptr}: {e}")))
}

fn native_images(v: &Value, n: usize) -> Result<Vec<GeneratedImage>, ProviderError> {
    let items = v.get("images").and_then(Value::as_array).ok_or_else(|| ProviderError::malformed("response lacks images"))?;
    if items.len() != n {
        return Err(ProviderError::malformed(format!("asked for {n} images, got {}", items.len())));
    }
    items
        .iter()
        .map(|item| {
            Ok(GeneratedImage {
                bytes: b64_field(item, "/b64")?,
                revised_prompt: item.get("revised_prompt").and_then(Value::as_str).unwrap_or_default().to_owned(),
            })
        })
        .collect()
}

pub struct LiveDescriber {
    client: Arc<LiveClient>,
}

impl LiveDescriber {
    pub fn new(client: Arc<LiveClient>) -> Self {
        Self { client }
    }
}

const DESCRIBE_INSTRUCTIONS: &str = "Describe this product sketch for a designer, then write a prompt for an \
image generator that would render it as a product photo. Reply with JSON: \
{\"description\": \"...\", \"generation_prompt\": \"...\"}.";

impl Describer for LiveDescriber {
    fn describe(&self, sketch: &[u8], note: &str) -> Result<DescribeResult, ProviderError> {
        let cfg = self.client.config();
        let image = B64.encode(sketch);
        match cfg.adapter {
            LiveAdapter::Native => {
                let body = json!({"model": cfg.describe_model, "sketch_b64": image, "note": note});
                let v = self.client.post_json(None, "/describe", &body, false)?;
                Ok(DescribeResult {
                    description: str_field(&v, "/description")?,
                    generation_prompt: str_field(&v, "/generation_prompt")?,
                })
            }
            LiveAdapter::OpenAi => {
                let text = if note.trim().is_empty() {
                    DESCRIBE_INSTRUCTIONS.to_owned()
                } else {
                    format!("{DESCRIBE_INSTRUCTIONS}\nDesigner note: {note}")
                };
                let body = json!({
                    "model": cfg.describe_model,
                    "messages": [{"role": "user", "content": [
                        {"type": "text", "text": text},
                        {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image}")}}
                    ]}],
                    "response_format": {"type": "json_object"}
                });
                let v = self.client.post_json(None, "/v1/chat/completions", &body, false)?;
                let content = str_field(&v, "/choices/0/message/content")?;
                let parsed: Value = serde_json::from_str(&content)
                    .map_err(|e| ProviderError::malformed(format!("describe content is not JSON: {e}")))?;
                Ok(DescribeResult {
                    description: str_field(&parsed, "/description")?,
                    generation_prompt: str_field(&parsed, "/generation_prompt")?,
                })
            }
        }
    }
}

pub struct LiveTextToImage {
    client: Arc<LiveClient>,
}

impl LiveTextToImage {
    pub fn new(client: Arc<LiveClient>) -> Self {
        Self { client }
    }
}

impl TextToImage for LiveTextToImage {
    fn text_to_images(&self, prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, ProviderError> {
        let cfg = self.client.config();
        match cfg.adapter {
            LiveAdapter::Native => {
                let body = json!({"model": cfg.image_model, "prompt": prompt, "n": n, "size": cfg.resolution});
                native_images(&self.client.post_json(None, "/images", &body, false)?, n)
            }
            // One image per request, as some OpenAI-compatible image models
            // reject n > 1. Any failure fails the whole batch.
            LiveAdapter::OpenAi => (0..n)
                .map(|_| {
                    let body = json!({
                        "model": cfg.image_model, "prompt": prompt, "n": 1,
                        "size": cfg.resolution, "response_format": "b64_json"
                    });
                    let v = self.client.post_json(None, "/v1/images/generations", &body, false)?;
                    Ok(GeneratedImage {
                        bytes: b64_field(&v, "/data/0/b64_json")?,
                        revised_prompt: v.pointer("/data/0/revised_prompt").and_then(Value::as_str).unwrap_or(prompt).to_owned(),
                    })
                })
                .collect(),
        }
    }
}

pub struct LiveGuided {
    client: Arc<LiveClient>,
}

impl LiveGuided {
    pub fn new(client: Arc<LiveClient>) -> Self {
        Self { client }
    }
}

impl SketchGuided for LiveGuided {
    fn sketch_guided_images(&self, sketch: &[u8], prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, ProviderError> {
        let cfg = self.client.config();
        let body = json!({"model": cfg.guided_model, "sketch_b64": B64.encode(sketch), "prompt": prompt, "n": n, "size": cfg.resolution});
        native_images(&self.client.post_json(None, "/guided", &body, false)?, n)
    }
}

pub struct LiveMeshBackend {
    client: Arc<LiveClient>,
    name: String,
}

impl LiveMeshBackend {
    pub fn new(client: Arc<LiveClient>, name: &str) -> Self {
        Self { client, name: name.to_owned() }
    }
}

impl MeshBackend for LiveMeshBackend {
    fn image_to_mesh(&self, image: &[u8]) -> Result<Vec<u8>, ProviderError> {
        let cfg = self.client.config();
        let body = json!({"backend": self.name, "image_b64": B64.encode(image), "format": "ply"});
        let v = self.client.post_json(cfg.mesh_base_url.as_ref(), "/mesh", &body, true)?;
        b64_field(&v, "/ply_b64")
    }
}

/// Embedding service returning raw float vectors; normalized here.
pub struct LiveEmbedder {
    client: Arc<LiveClient>,
}

impl LiveEmbedder {
    pub fn new(client: Arc<LiveClient>) -> Self {
        Self { client }
    }

    fn vector(&self, path: &str, body: Value) -> Result<EmbeddingVector, EmbedError> {
        let cfg = self.client.config();
        let v = self.client.post_json(cfg.embed_base_url.as_ref(), path, &body, false)?;
        let values: Vec<f64> = v
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::malformed("response lacks embedding"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ProviderError::malformed("embedding holds a non-number")))
            .collect::<Result<_, _>>()?;
        if cfg.embed_dimension != 0 && values.len() != cfg.embed_dimension {
            return Err(EmbedError::DimensionMismatch { left: values.len(), right: cfg.embed_dimension });
        }
        EmbeddingVector::unit(values)
    }
}

impl Embedder for LiveEmbedder {
    fn dimension(&self) -> usize {
        self.client.config().embed_dimension
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, EmbedError> {
        crate::imaging::decode(bytes).map_err(|e| EmbedError::UnsupportedImage(e.0))?;
        let model = &self.client.config().embed_model;
        self.vector("/embed/image", json!({"model": model, "image_b64": B64.encode(bytes)}))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let model = &self.client.config().embed_model;
        self.vector("/embed/text", json!({"model": model, "text": text}))
    }
}
