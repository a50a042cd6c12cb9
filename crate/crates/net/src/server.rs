//! Axum router for the preference study.
//!
//! Participant routes never reveal item types; the export route requires a
//! bearer token and is disabled when none is configured.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use lexdrift_core::study::{write_records, NextTrial, Side, StudyEngine};
use lexdrift_core::Error;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<StudyEngine>,
    pub admin_token: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub total_trials: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub trial_index: usize,
    pub choice_side: Side,
    pub rt_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResponseAccepted {
    pub accepted: bool,
    pub too_fast: bool,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            Error::Validation(_) | Error::Parse { .. } => (StatusCode::BAD_REQUEST, "validation"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Sequencing { .. } => (StatusCode::CONFLICT, "sequencing"),
            Error::Finished => (StatusCode::GONE, "finished"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        (
            status,
            Json(serde_json::json!({ "error": kind, "message": self.0.to_string() })),
        )
            .into_response()
    }
}

async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let session = state.engine.create_session(&body.participant_id)?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: session.session_id,
            total_trials: session.plan.len(),
        }),
    ))
}

async fn next_trial(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<NextTrial>, ApiError> {
    Ok(Json(state.engine.next_trial(&id)?))
}

async fn submit_response(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SubmitResponse>,
) -> Result<Json<ResponseAccepted>, ApiError> {
    let out = state
        .engine
        .record_response(&id, body.trial_index, body.choice_side, body.rt_ms)?;
    Ok(Json(ResponseAccepted {
        accepted: true,
        too_fast: out.too_fast,
    }))
}

async fn export(State(state): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let Some(token) = &state.admin_token else {
        return Ok((StatusCode::FORBIDDEN, "export disabled: no admin token configured").into_response());
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented != Some(token.as_str()) {
        return Ok((StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response());
    }
    let mut body = Vec::new();
    write_records(&state.engine.export(), &mut body)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/trial", get(next_trial))
        .route("/api/sessions/{id}/responses", post(submit_response))
        .route("/api/admin/export", get(export))
        .route("/healthz", get(healthz))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Periodically marks idle sessions incomplete.
pub fn spawn_expiry(engine: Arc<StudyEngine>, every: Duration, idle_ms: i64) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            match engine.expire_idle(idle_ms) {
                Ok(ids) if !ids.is_empty() => log::info!("expired {} idle session(s)", ids.len()),
                Ok(_) => {}
                Err(e) => log::error!("expiry failed: {e}"),
            }
        }
    })
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: &str, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
