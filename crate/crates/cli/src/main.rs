use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use draftforge_core::config::{Config, ProviderMode};

mod commands;
mod errors;
mod output;

use errors::exit_code;
use output::Output;

#[derive(Debug, Parser)]
#[command(name = "draftforge", version, about = "Sketch to printable mesh pipeline")]
struct Cli {
    /// Data directory holding blobs and session logs (env S2P_DATA_DIR).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Config file (env S2P_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Provider mode for every capability: mock or live.
    #[arg(long, global = true)]
    mode: Option<ProviderMode>,
    /// Seed for mock providers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Step through a design session one stage at a time.
    #[command(subcommand)]
    Session(commands::session::SessionCmd),
    /// Run a complete comparison route on one sketch.
    #[command(subcommand)]
    Route(commands::route::RouteCmd),
    /// Alignment and diversity reports.
    #[command(subcommand)]
    Metrics(commands::metrics::MetricsCmd),
    /// Build synthetic image datasets from a sketch manifest.
    #[command(subcommand)]
    Dataset(commands::dataset::DatasetCmd),
    /// Analyze, repair and convert mesh files.
    #[command(subcommand)]
    Mesh(commands::mesh::MeshCmd),
    /// Read stored artifacts and collect unreferenced ones.
    #[command(subcommand)]
    Blob(commands::blob::BlobCmd),
    /// Start the HTTP service.
    Serve {
        /// Listen address, overriding the config.
        #[arg(long)]
        bind: Option<String>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = Config::load(cli.config.as_deref()).context("loading configuration")?;
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    if let Some(mode) = cli.mode {
        cfg.provider.mode = mode;
        cfg.provider.capabilities.clear();
    }
    if let Some(seed) = cli.seed {
        cfg.provider.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<Output> {
    let cfg = load_config(&cli)?;
    tracing::debug!(data_dir = %cfg.data_dir.display(), mode = ?cfg.provider.mode, "configuration loaded");
    match cli.command {
        Command::Session(cmd) => commands::session::run(&cfg, cmd),
        Command::Route(cmd) => commands::route::run(&cfg, cmd),
        Command::Metrics(cmd) => commands::metrics::run(&cfg, cmd),
        Command::Dataset(cmd) => commands::dataset::run(&cfg, cmd),
        Command::Mesh(cmd) => commands::mesh::run(&cfg, cmd),
        Command::Blob(cmd) => commands::blob::run(&cfg, cmd),
        Command::Serve { bind } => {
            let mut cfg = cfg;
            if let Some(b) = bind {
                cfg.server.bind = b;
            }
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(draftforge_server::serve(&cfg))?;
            Ok(Output::text("server stopped"))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            out.print(json);
            ExitCode::from(out.exit_code)
        }
        Err(err) => {
            let (code, kind) = exit_code(&err);
            if json {
                let body = serde_json::json!({"error": {"kind": kind, "detail": format!("{err:#}")}});
                println!("{}", serde_json::to_string_pretty(&body).expect("error body serializes"));
            }
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
