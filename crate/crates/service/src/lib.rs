//! HTTP facade over teaching sessions and script runs, backed by a
//! directory store.

mod api;
mod config;
pub mod store;

pub use api::{router, AnswerRequest, AppState, BackendRequest, RunRequest};
pub use config::{ServiceConfig, ENV_PORT, ENV_STORE};
pub use store::{SessionStore, StoredSession};

use std::sync::Arc;

use hilc_core::log::LogError;
use hilc_core::recognition::ActionModel;
use hilc_core::runtime::BackendError;
use hilc_core::teaching::TeachingError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error(transparent)]
    Teaching(#[from] TeachingError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("the execution backend is busy")]
    Busy,
    #[error("configuration: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("internal: {0}")]
    Internal(String),
}

/// Loads the model, restores the store and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let model = ActionModel::load(&config.model)
        .map_err(|e| ServiceError::Config(format!("model {}: {e}", config.model.display())))?;
    let addr = config.addr();
    let state = AppState::open(config, Arc::new(model))?;
    tracing::info!(
        sessions = state.store().ids().len(),
        quarantined = state.store().quarantined().len(),
        "store restored"
    );
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Config(format!("bind {addr}: {e}")))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
