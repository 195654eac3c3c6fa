//! HTTP and WebSocket front end for teaching sessions.

pub mod config;
pub mod error;
pub mod llm;
pub mod protocol;
pub mod realtime;
pub mod routes;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use structpolicy::restructure::LlmBackend;

pub use config::ServiceConfig;
pub use error::{ApiError, ErrorEnvelope};
pub use routes::router;
pub use state::AppState;

/// Builds the shared state, with the LLM backend named in the config.
pub fn app_state(config: ServiceConfig) -> anyhow::Result<Arc<AppState>> {
    let backend = llm::backend_from_settings(&config.llm)?;
    Ok(Arc::new(AppState::new(config, backend)))
}

pub fn app_state_with(config: ServiceConfig, backend: Arc<dyn LlmBackend>) -> Arc<AppState> {
    Arc::new(AppState::new(config, backend))
}

/// Binds `listener` and serves until the future is dropped.
pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> anyhow::Result<()> {
    std::fs::create_dir_all(&state.config.session_root)?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Serves on the configured address until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port).parse()?;
    let state = app_state(config)?;
    std::fs::create_dir_all(&state.config.session_root)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
