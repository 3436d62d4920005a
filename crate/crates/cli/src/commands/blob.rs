use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Subcommand;
use draftforge_core::config::Config;
use draftforge_core::store::{ContentHash, Store};
use serde::Serialize;

use super::write_file;
use crate::errors::invalid;
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum BlobCmd {
    /// Copy a blob out of the store.
    Get {
        hash: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delete blobs that no session log references.
    Gc {
        /// List what would be removed without deleting.
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Debug, Serialize)]
struct Copied {
    hash: ContentHash,
    path: PathBuf,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct Collected {
    dry_run: bool,
    removed: Vec<ContentHash>,
}

pub fn run(cfg: &Config, cmd: BlobCmd) -> anyhow::Result<Output> {
    let store = Store::open(&cfg.data_dir)?;
    match cmd {
        BlobCmd::Get { hash, out } => {
            let hash = ContentHash::parse(&hash).map_err(|e| invalid(e.to_string()))?;
            let bytes = store.blobs.get(&hash)?;
            write_file(&out, &bytes)?;
            let text = format!("wrote {} ({} bytes)", out.display(), bytes.len());
            Output::new(&Copied { hash, path: out, bytes: bytes.len() }, text)
        }
        BlobCmd::Gc { dry_run } => {
            let removed = store.gc(dry_run)?;
            let verb = if dry_run { "would remove" } else { "removed" };
            let mut text = format!("{verb} {} unreferenced blobs\n", removed.len());
            for h in &removed {
                let _ = writeln!(text, "{h}");
            }
            Output::new(&Collected { dry_run, removed }, text)
        }
    }
}
