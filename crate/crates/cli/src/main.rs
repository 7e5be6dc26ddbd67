use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use stancegraph_cli::cli::{self, Cli, Command};
use stancegraph_cli::service::{self, ProjectState};
use stancegraph_core::clip::{load_manifest_file, Strictness};
use stancegraph_core::MarkovModel;
use tower_http::services::ServeDir;

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Command::Serve {
        manifest,
        port,
        host,
        models,
        ui,
    } = &args.command
    {
        return match serve(manifest.clone(), host, *port, models, ui.clone()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": "serve", "message": format!("{e:#}") })
                );
                ExitCode::from(1)
            }
        };
    }
    let out = cli::run(&args.command);
    print!("{}", out.stdout);
    for line in &out.stderr {
        eprintln!("{line}");
    }
    ExitCode::from(out.code as u8)
}

fn serve(manifest: PathBuf, host: &str, port: u16, models: &[PathBuf], ui: Option<PathBuf>) -> anyhow::Result<()> {
    let library = load_manifest_file(&manifest, Strictness::Lenient)
        .with_context(|| format!("loading {}", manifest.display()))?;
    let mut state = ProjectState::new(library, Some(manifest))?;
    for p in models {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let model: MarkovModel = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        state.models.push(model);
    }
    let mut app = service::router(service::shared(state));
    if let Some(dir) = ui {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        eprintln!(
            "{}",
            serde_json::json!({ "listening": listener.local_addr()?.to_string() })
        );
        axum::serve(listener, app).await?;
        Ok(())
    })
}
