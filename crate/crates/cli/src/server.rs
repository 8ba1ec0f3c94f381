//! JSON session API under `/api/v1`.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use demoa_core::evolution::EvoParams;
use demoa_core::instance::Instance;
use demoa_core::localsearch::LsParams;
use demoa_core::orchestrator::{DmPolicy, RunConfig};
use demoa_core::session::{SessionError, SessionManager, SessionSummary, SessionView};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const API_VERSION: &str = "v1";

pub type AppState = Arc<SessionManager>;

/// Run settings for an interactive session; the decision policy is
/// always interactive.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SessionConfig {
    pub n_vehicles: usize,
    #[serde(default = "default_eras")]
    pub n_eras: usize,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub evo: EvoParams,
    #[serde(default)]
    pub ls: LsParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub honor_release: bool,
}

fn default_eras() -> usize {
    7
}

impl From<SessionConfig> for RunConfig {
    fn from(c: SessionConfig) -> Self {
        RunConfig {
            n_eras: c.n_eras,
            delta: c.delta,
            n_vehicles: c.n_vehicles,
            dm_policy: DmPolicy::Interactive,
            evo: c.evo,
            ls: c.ls,
            seed: c.seed,
            honor_release: c.honor_release,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub instance_id: String,
    pub config: SessionConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

#[derive(Debug, Deserialize)]
pub struct Decide {
    /// 1-based member index.
    pub index: usize,
    #[serde(default)]
    pub era: Option<usize>,
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.0.to_string();
        let (status, body) = match &self.0 {
            SessionError::NotFound(_) | SessionError::UnknownInstance(_) => {
                (StatusCode::NOT_FOUND, json!({ "error": message }))
            }
            SessionError::Conflict { .. } => (StatusCode::CONFLICT, json!({ "error": message })),
            SessionError::Rejected { min, max, .. } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": message, "valid_range": { "min": min, "max": max } }),
            ),
            SessionError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": message })),
            SessionError::Snapshot(_) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": message })),
        };
        (status, Json(body)).into_response()
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "api": API_VERSION, "version": env!("CARGO_PKG_VERSION") }))
}

async fn list_instances(State(m): State<AppState>) -> Json<Vec<String>> {
    Json(m.instance_names())
}

async fn add_instance(State(m): State<AppState>, body: String) -> Response {
    match Instance::from_json(&body) {
        Ok(inst) => (StatusCode::CREATED, Json(json!({ "id": m.register_instance(inst) }))).into_response(),
        Err(e) => (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn list_sessions(State(m): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(m.list())
}

async fn create_session(
    State(m): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let id = m.create_session(&req.instance_id, req.config.into())?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn get_state(State(m): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(m.get_state(&id)?))
}

async fn decide(
    State(m): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<Decide>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    m.decide(&id, req.era, req.index)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "accepted": true, "index": req.index }))))
}

async fn abort(State(m): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    m.abort(&id)?;
    Ok(Json(json!({ "aborted": true })))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/instances", get(list_instances).post(add_instance))
        .route("/api/v1/sessions", get(list_sessions).post(create_session))
        .route("/api/v1/sessions/{id}", get(get_state))
        .route("/api/v1/sessions/{id}/decide", post(decide))
        .route("/api/v1/sessions/{id}/abort", post(abort))
        .with_state(state)
}
