//! Configuration file schema (TOML) and environment overrides.
//!
//! ```toml
//! data_dir = "./draftforge-data"
//!
//! [provider]
//! mode = "mock"            # default for every capability: mock | live
//! seed = 7
//! # per-capability override, e.g. keep embeddings offline:
//! # capabilities = { embed = "mock" }
//!
//! [provider.mock]
//! image_size = 256
//! blocked_terms = ["weapon"]
//! mesh_backends = [
//!   { name = "prim-clean" },
//!   { name = "prim-holes", defects = { drop_faces = 5 } },
//! ]
//!
//! [provider.live]
//! base_url = "https://models.example.com"
//! adapter = "native"       # native | openai
//! resolution = "1024x1024"
//!
//! [provider.retry]
//! max_attempts = 5
//!
//! [pipeline]
//! default_image_count = 4
//!
//! [dataset]
//! workers = 4
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! cors_origin = "http://localhost:5173"
//! ```
//!
//! Environment variables override the file: `S2P_PROVIDER_MODE`,
//! `S2P_API_KEY`, `S2P_SEED`, `S2P_DATA_DIR`. `S2P_CONFIG` names the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Defects, RateLimitConfig, RetryPolicy};
use crate::mesh::RepairPlan;
use crate::Exec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {var}: {value:?}")]
    Env { var: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Mock,
    Live,
}

impl std::str::FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown provider mode {other:?} (expected mock or live)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Describe,
    Images,
    Guided,
    Mesh,
    Embed,
}

impl Capability {
    pub const ALL: [Capability; 5] = [Self::Describe, Self::Images, Self::Guided, Self::Mesh, Self::Embed];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiveAdapter {
    /// This project's own JSON endpoints.
    #[default]
    Native,
    /// OpenAI-compatible chat completions and image generations.
    OpenAi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub base_url: String,
    pub embed_base_url: Option<String>,
    pub mesh_base_url: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub adapter: LiveAdapter,
    pub describe_model: String,
    pub image_model: String,
    pub guided_model: String,
    pub embed_model: String,
    /// Expected embedding length; 0 accepts whatever the service returns.
    pub embed_dimension: usize,
    pub resolution: String,
    pub timeout_secs: u64,
    pub mesh_timeout_secs: u64,
    pub mesh_backends: Vec<String>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            embed_base_url: None,
            mesh_base_url: None,
            api_key: None,
            adapter: LiveAdapter::Native,
            describe_model: "gpt-4o".into(),
            image_model: "dall-e-3".into(),
            guided_model: "controlnet-scribble".into(),
            embed_model: "clip-vit-b-32".into(),
            embed_dimension: 0,
            resolution: "1024x1024".into(),
            timeout_secs: 60,
            mesh_timeout_secs: 120,
            mesh_backends: vec!["shap-e".into(), "instant-mesh".into(), "trellis".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockMeshSpec {
    pub name: String,
    /// Omitted: use the preset for built-in names (`prim-holes`, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defects: Option<Defects>,
}

impl MockMeshSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.into(), defects: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub image_size: u32,
    /// Case-insensitive substrings that trigger a safety rejection.
    pub blocked_terms: Vec<String>,
    pub mesh_backends: Vec<MockMeshSpec>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            blocked_terms: Vec::new(),
            mesh_backends: ["prim-clean", "prim-holes", "prim-fragments"].map(MockMeshSpec::named).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub seed: u64,
    pub capabilities: BTreeMap<Capability, ProviderMode>,
    pub mock: MockConfig,
    pub live: LiveConfig,
    pub retry: RetryPolicy,
    pub rate_limit: RateLimitConfig,
}

impl ProviderConfig {
    pub fn mode_for(&self, cap: Capability) -> ProviderMode {
        self.capabilities.get(&cap).copied().unwrap_or(self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub default_image_count: usize,
    /// Backends used by `advance_mesh` when the caller names none; empty
    /// means every configured backend.
    pub mesh_backends: Vec<String>,
    pub repair: RepairPlan,
    pub preview_size: u32,
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            default_image_count: 4,
            mesh_backends: Vec::new(),
            repair: RepairPlan::default(),
            preview_size: 128,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub workers: usize,
    pub exec: Exec,
    /// Image prompt per record; `{generation_prompt}` and `{description}`
    /// are substituted.
    pub prompt_template: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { workers: 4, exec: Exec::default(), prompt_template: "{generation_prompt}".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub cors_origin: Option<String>,
    pub job_workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), cors_origin: None, job_workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data_dir: PathBuf,
    pub provider: ProviderConfig,
    pub pipeline: PipelineConfig,
    pub dataset: DatasetConfig,
    pub server: ServerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("draftforge-data"),
            provider: ProviderConfig::default(),
            pipeline: PipelineConfig::default(),
            dataset: DatasetConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_owned(), message: e.to_string() })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml(&text, path)
    }

    /// Loads `path` (or `S2P_CONFIG`, or defaults) and applies environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let env_path = std::env::var_os("S2P_CONFIG").map(PathBuf::from);
        let mut cfg = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// Applies the `S2P_*` overrides using `get` to read variables.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("S2P_PROVIDER_MODE") {
            self.provider.mode = v.parse().map_err(|_| ConfigError::Env { var: "S2P_PROVIDER_MODE", value: v.clone() })?;
            self.provider.capabilities.clear();
        }
        if let Some(v) = get("S2P_SEED") {
            self.provider.seed = v.trim().parse().map_err(|_| ConfigError::Env { var: "S2P_SEED", value: v.clone() })?;
        }
        if let Some(v) = get("S2P_API_KEY").filter(|v| !v.is_empty()) {
            self.provider.live.api_key = Some(v);
        }
        if let Some(v) = get("S2P_DATA_DIR").filter(|v| !v.is_empty()) {
            self.data_dir = PathBuf::from(v);
        }
        Ok(())
    }
}
