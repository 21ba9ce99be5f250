use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use alforest_service::{router, AppState};
use clap::Parser;

/// HTTP service for expert labelling sessions.
#[derive(Debug, Parser)]
#[command(name = "label-service", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "LABEL_SERVICE_ADDR", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory holding one subdirectory per session.
    #[arg(long, env = "LABEL_SERVICE_DATA", default_value = "sessions")]
    data_dir: PathBuf,
    /// Built UI assets, served for any path the API does not claim.
    #[arg(long, env = "LABEL_SERVICE_STATIC")]
    static_dir: Option<PathBuf>,
    /// Half-width of the chart context around each queried point.
    #[arg(long, default_value_t = 2.0)]
    context_hours: f64,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    if !(args.context_hours >= 0.0) {
        eprintln!("error: --context-hours must be non-negative");
        return ExitCode::from(2);
    }
    let context_seconds = (args.context_hours * 3600.0).round() as i64;
    let state = match AppState::open(&args.data_dir, context_seconds) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot open {}: {e}", args.data_dir.display());
            return ExitCode::FAILURE;
        }
    };
    let app = router(state, args.static_dir.as_deref());
    let listener = match tokio::net::TcpListener::bind(args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.bind);
            return ExitCode::FAILURE;
        }
    };
    eprintln!("label-service listening on {}", args.bind);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
