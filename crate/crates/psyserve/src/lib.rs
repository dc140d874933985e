//! HTTP service for same/different psychophysics sessions.
//!
//! Observers see one stimulus at a time in a seeded random order and answer
//! whether the two targets looked the same. Labels never leave the server
//! while a session is open.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;

mod error;
pub mod store;

pub use error::StoreError;
pub use store::{load_sessions, load_sets, NextTrial, SessionInfo, SetInfo, Store};

use perceptlab_core::study::{SessionStatus, SessionSummary};

type Shared = Arc<Store>;

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub set: String,
    pub observer: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct SubmitResponse {
    pub trial_index: usize,
    pub judgment: String,
    #[serde(default)]
    pub rt_ms: u64,
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StoreError> + Send + 'static,
) -> Result<T, StoreError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| StoreError::Io(std::io::Error::other(e)))?
}

async fn list_sets(State(store): State<Shared>) -> Json<Vec<SetInfo>> {
    Json(store.sets())
}

async fn create_session(
    State(store): State<Shared>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionInfo>), StoreError> {
    let seed = body.seed.unwrap_or_else(rand::random);
    let info = blocking(move || store.create_session(&body.set, &body.observer, seed)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn next_trial(State(store): State<Shared>, Path(id): Path<String>) -> Result<Json<NextTrial>, StoreError> {
    Ok(Json(store.next_trial(&id)?))
}

async fn submit(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<SubmitResponse>,
) -> Result<Json<serde_json::Value>, StoreError> {
    let judgment = body
        .judgment
        .parse()
        .map_err(|_| StoreError::BadRequest(format!("invalid judgment `{}`", body.judgment)))?;
    let remaining = blocking(move || store.record_response(&id, body.trial_index, judgment, body.rt_ms)).await?;
    Ok(Json(serde_json::json!({ "ok": true, "remaining": remaining })))
}

async fn summary(State(store): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionSummary>, StoreError> {
    if store.session_info(&id)?.status != SessionStatus::Complete {
        return Err(StoreError::Conflict(format!(
            "session `{id}` is still open; summaries are available once it is complete"
        )));
    }
    Ok(Json(store.session_summary(&id)?))
}

/// Routes: sessions API plus static stimulus images under
/// `/static/stimuli/`.
pub fn router(store: Shared) -> Router {
    let files = ServeDir::new(store.stimuli_dir());
    Router::new()
        .route("/sets", get(list_sets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/responses", post(submit))
        .route("/sessions/{id}/summary", get(summary))
        .nest_service("/static/stimuli", files)
        .with_state(store)
}

/// Serves the API until the process is stopped. `ui_dir`, when given, is
/// mounted at `/` for the observer client.
pub async fn serve(store: Store, addr: SocketAddr, ui_dir: Option<&std::path::Path>) -> std::io::Result<()> {
    let mut app = router(Arc::new(store));
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
