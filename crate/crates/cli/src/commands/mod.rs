pub mod blob;
pub mod dataset;
pub mod mesh;
pub mod metrics;
pub mod route;
pub mod session;

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use draftforge_core::config::Config;
use draftforge_core::gateway::Gateway;
use draftforge_core::mesh::RepairPlan;
use draftforge_core::pipeline::Pipeline;
use draftforge_core::store::Store;

use crate::errors::{invalid, read_input};

pub fn gateway(cfg: &Config) -> anyhow::Result<Gateway> {
    Ok(Gateway::from_config(&cfg.provider)?)
}

pub fn pipeline(cfg: &Config) -> anyhow::Result<Pipeline> {
    let store = Store::open(&cfg.data_dir).with_context(|| format!("opening data dir {}", cfg.data_dir.display()))?;
    Ok(Pipeline::new(store, gateway(cfg)?, cfg.pipeline.clone()))
}

/// Where files derived from a session are written by default.
pub fn exports_dir(cfg: &Config, session: &str) -> PathBuf {
    cfg.data_dir.join("exports").join(session)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Plan from a JSON file, or the configured default.
pub fn repair_plan(cfg: &Config, path: Option<&Path>) -> anyhow::Result<RepairPlan> {
    let plan = match path {
        Some(p) => read_json(p)?,
        None => cfg.pipeline.repair,
    };
    plan.validate()?;
    Ok(plan)
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
