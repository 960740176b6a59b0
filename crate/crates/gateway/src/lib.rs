//! HTTP/JSON gateway over [`edgetail::env::Environment`].
//!
//! Routes, all under `/v1`:
//!
//! - `POST /reset {seed?, session?}` starts an episode, in a new session
//!   unless an existing one is named.
//! - `POST /step {session, action}` applies one action and advances one window.
//! - `GET /spec?session=` echoes the session's configuration and plan catalog.
//! - `DELETE /session?session=` closes a session.
//!
//! Calls on one session are serialized through a FIFO lock; different
//! sessions step concurrently on the blocking pool.

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use edgetail::config::SimulationConfig;
use edgetail::env::{EnvError, Environment, StepInfo, FEATURE_NAMES};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use uuid::Uuid;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{message}")]
    BadRequest { field: Option<String>, message: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest { .. } => StatusCode::BAD_REQUEST,
            ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let field = match &self {
            ApiError::BadRequest { field, .. } => field.clone(),
            _ => None,
        };
        let body = ErrorBody {
            error: self.to_string(),
            field,
        };
        (self.status(), Json(body)).into_response()
    }
}

impl From<EnvError> for ApiError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidAction { field, reason } => ApiError::BadRequest {
                message: format!("{field}: {reason}"),
                field: Some(field),
            },
            EnvError::NotReset | EnvError::EpisodeDone => ApiError::Conflict(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

/// Parses a JSON body, naming the offending field in the error when serde
/// reports one.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    serde_json::from_slice(text).map_err(|e| {
        let message = e.to_string();
        let field = message
            .split('`')
            .nth(1)
            .filter(|_| message.contains("field"))
            .map(str::to_string);
        ApiError::BadRequest { field, message }
    })
}

fn parse_session(raw: &str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(raw).map_err(|_| ApiError::BadRequest {
        field: Some("session".into()),
        message: format!("session: not a valid session token: {raw:?}"),
    })
}

type SharedEnv = Arc<tokio::sync::Mutex<Environment>>;

pub struct AppState {
    config: SimulationConfig,
    sessions: Mutex<HashMap<Uuid, SharedEnv>>,
}

impl AppState {
    pub fn new(config: SimulationConfig) -> Self {
        Self {
            config,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session map").len()
    }

    pub fn close_all(&self) {
        self.sessions.lock().expect("session map").clear();
    }

    fn session(&self, id: &Uuid) -> Result<SharedEnv, ApiError> {
        self.sessions
            .lock()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetRequest {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub session: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResetResponse {
    pub session: Uuid,
    pub state: Vec<f64>,
    /// Number of servers.
    pub m: usize,
    /// Number of services.
    pub i: usize,
    /// Per service, the size of every plan in catalog order.
    pub plan_shapes: Vec<Vec<usize>>,
    /// Per service, the server ids of every plan in catalog order.
    pub plans: Vec<Vec<Vec<u32>>>,
    pub feature_names: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub session: String,
    pub action: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpecResponse {
    pub session: Uuid,
    pub config: SimulationConfig,
    pub plans: Vec<Vec<Vec<u32>>>,
    pub state_dimension: usize,
    pub state_order: String,
}

#[derive(Debug, Deserialize)]
pub struct SessionQuery {
    pub session: Option<String>,
}

#[derive(Debug, Deserialize)]
struct SessionBody {
    session: String,
}

async fn reset(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<ResetResponse>, ApiError> {
    let req: ResetRequest = parse_body(&body)?;
    let (id, env) = match req.session.as_deref() {
        Some(raw) => {
            let id = parse_session(raw)?;
            (id, app.session(&id)?)
        }
        None => {
            let env = Environment::new(app.config.clone()).map_err(ApiError::from)?;
            let id = Uuid::new_v4();
            let env = Arc::new(tokio::sync::Mutex::new(env));
            app.sessions.lock().expect("session map").insert(id, env.clone());
            (id, env)
        }
    };
    let mut guard = env.lock_owned().await;
    let response = tokio::task::spawn_blocking(move || -> Result<ResetResponse, ApiError> {
        let state = guard.reset(req.seed)?;
        Ok(ResetResponse {
            session: id,
            state: state.values,
            m: guard.num_servers(),
            i: guard.num_services(),
            plan_shapes: guard.plan_shapes(),
            plans: guard.plans(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            seed: guard.seed()?,
        })
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(response))
}

async fn step(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<StepResponse>, ApiError> {
    let req: StepRequest = parse_body(&body)?;
    let id = parse_session(&req.session)?;
    let env = app.session(&id)?;
    let mut guard = env.lock_owned().await;
    let outcome = tokio::task::spawn_blocking(move || guard.step(&req.action))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(StepResponse {
        state: outcome.state.values,
        reward: outcome.reward,
        done: outcome.done,
        info: outcome.info,
    }))
}

fn session_from(query: &SessionQuery, body: &[u8]) -> Result<Uuid, ApiError> {
    match &query.session {
        Some(raw) => parse_session(raw),
        None if body.iter().all(u8::is_ascii_whitespace) => Err(ApiError::BadRequest {
            field: Some("session".into()),
            message: "session: missing".into(),
        }),
        None => parse_session(&parse_body::<SessionBody>(body)?.session),
    }
}

async fn spec(
    State(app): State<Arc<AppState>>,
    Query(query): Query<SessionQuery>,
    body: Bytes,
) -> Result<Json<SpecResponse>, ApiError> {
    let id = session_from(&query, &body)?;
    let env = app.session(&id)?;
    let guard = env.lock().await;
    Ok(Json(SpecResponse {
        session: id,
        config: guard.config().clone(),
        plans: guard.plans(),
        state_dimension: guard.state_dimension(),
        state_order: "server-major, feature-minor".into(),
    }))
}

async fn close(
    State(app): State<Arc<AppState>>,
    Query(query): Query<SessionQuery>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let id = session_from(&query, &body)?;
    app.sessions
        .lock()
        .expect("session map")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/reset", post(reset))
        .route("/v1/step", post(step))
        .route("/v1/spec", get(spec))
        .route("/v1/session", delete(close))
        .with_state(app)
}

/// Serves until `shutdown` resolves, then closes every session.
pub async fn serve(
    listener: TcpListener,
    config: SimulationConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = Arc::new(AppState::new(config));
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    app.close_all();
    Ok(())
}
