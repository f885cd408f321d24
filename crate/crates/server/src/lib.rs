//! HTTP session service for live negotiation.
//!
//! Routes, all JSON:
//! - `POST /api/v1/sessions` creates a session for a product
//! - `POST /api/v1/sessions/{id}/messages` applies one buyer message
//! - `GET /api/v1/sessions/{id}` returns the session snapshot
//! - `GET /api/v1/health`
//!
//! Messages to one session are applied one at a time in arrival order.
//! Errors share the envelope `{code, message, detail}`.

pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bargain_core::domain::{Decision, DomainError, Event, Product, Session, SessionStatus};
use bargain_core::engine::{Engine, EngineError};
use bargain_core::extractor::PriceExtraction;
use bargain_core::generator::ReplySource;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tower_http::services::ServeDir;

pub use store::{Store, StoreError};

pub const ENV_DATA_DIR: &str = "BARGAIN_DATA_DIR";
pub const ENV_PORT: &str = "BARGAIN_PORT";
pub const ENV_TOKEN: &str = "BARGAIN_API_TOKEN";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Value,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, detail: Value) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                detail,
            },
        }
    }

    fn malformed(e: serde_json::Error) -> Self {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "malformed_json",
            "request body is not valid for this endpoint",
            Value::String(e.to_string()),
        )
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session {id}"),
            Value::Null,
        )
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            "internal error",
            Value::String(e.to_string()),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub struct AppState {
    pub engine: Arc<Engine>,
    pub store: Store,
    pub token: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    product: Value,
    #[serde(default)]
    rng_seed: Option<u64>,
    #[serde(default)]
    t_max: Option<u32>,
    #[serde(default)]
    currency: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub session: Session,
}

#[derive(Debug, Deserialize)]
struct MessageRequest {
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageResponse {
    /// Absent when the buyer's message ended the session.
    pub reply: Option<String>,
    pub decision_trace: Option<Decision>,
    pub extraction: PriceExtraction,
    pub reply_source: Option<ReplySource>,
    pub status: SessionStatus,
    pub session: Session,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let request: CreateRequest = serde_json::from_slice(&body).map_err(ApiError::malformed)?;
    let mut product = request.product;
    if let Some(obj) = product.as_object_mut() {
        obj.entry("id")
            .or_insert_with(|| Value::String(uuid::Uuid::new_v4().to_string()));
    }
    let product: Product = serde_json::from_value(product).map_err(ApiError::malformed)?;
    if let Err(e) = product.validate() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_product",
            e.to_string(),
            Value::Null,
        ));
    }
    if request.t_max == Some(0) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_config",
            "t_max must be positive",
            Value::Null,
        ));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let seed = request.rng_seed.unwrap_or_else(rand_seed);
    let mut session = state
        .engine
        .new_session(id.clone(), product, seed)
        .map_err(ApiError::internal)?;
    if let Some(t) = request.t_max {
        session = session.with_t_max(t);
    }
    if let Some(c) = request.currency {
        session = session.with_currency(c);
    }
    state
        .store
        .insert(session.clone())
        .await
        .map_err(ApiError::internal)?;
    tracing::info!(session = %id, "session created");
    Ok((
        StatusCode::CREATED,
        Json(CreateResponse {
            session_id: id,
            session,
        }),
    ))
}

fn rand_seed() -> u64 {
    let bytes = uuid::Uuid::new_v4().into_bytes();
    u64::from_le_bytes(bytes[..8].try_into().expect("eight bytes"))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Session>, ApiError> {
    let handle = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let session = handle.lock().await.clone();
    Ok(Json(session))
}

fn terminal(status: SessionStatus) -> ApiError {
    ApiError::new(
        StatusCode::CONFLICT,
        "session_terminal",
        format!("session is {}", serde_json::to_value(status).unwrap_or_default().as_str().unwrap_or("closed")),
        Value::Null,
    )
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<MessageResponse>, ApiError> {
    let request: MessageRequest = serde_json::from_slice(&body).map_err(ApiError::malformed)?;
    if request.text.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_message",
            "text must not be empty",
            Value::Null,
        ));
    }
    let handle = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    // The tokio mutex is fair, so queued messages run in arrival order.
    let mut guard = handle.lock().await;
    if !guard.is_open() {
        return Err(terminal(guard.status));
    }
    let current = guard.clone();
    let worker = state.clone();
    let text = request.text;
    let turn = tokio::task::spawn_blocking(move || -> Result<MessageResponse, ApiError> {
        let timestamp = now_ms();
        let outcome = worker
            .engine
            .respond(&current, &text, timestamp)
            .map_err(|e| match e {
                EngineError::Domain(DomainError::TerminalSession(s)) => terminal(s),
                other => ApiError::internal(other),
            })?;
        let mut events = vec![Event::BuyerUtterance {
            text,
            offer: outcome.extraction.price,
            timestamp,
        }];
        if let (Some(decision), Some(reply)) = (&outcome.decision, &outcome.reply) {
            events.push(Event::AgentTurn {
                decision: decision.clone(),
                text: reply.clone(),
                timestamp,
            });
        }
        worker.store.record(&current.id, events).map_err(ApiError::internal)?;
        Ok(MessageResponse {
            reply: outcome.reply,
            decision_trace: outcome.decision,
            extraction: outcome.extraction,
            reply_source: outcome.reply_source,
            status: outcome.session.status,
            session: outcome.session,
        })
    })
    .await
    .map_err(ApiError::internal)??;
    *guard = turn.session.clone();
    Ok(Json(turn))
}

async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token",
                Value::Null,
            )
            .into_response();
        }
    }
    next.run(request).await
}

/// API routes, plus the static bundle at `/` when `static_dir` exists.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let sessions = Router::new()
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/messages", post(post_message))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let app = Router::new()
        .route("/api/v1/health", get(health))
        .merge(sessions)
        .with_state(state);
    match static_dir {
        Some(dir) if dir.is_dir() => app.fallback_service(ServeDir::new(dir)),
        _ => app,
    }
}

pub struct ServeOptions {
    pub addr: SocketAddr,
    pub data_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub token: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn build_state(engine: Engine, data_dir: Option<&std::path::Path>, token: Option<String>) -> Result<Arc<AppState>, StoreError> {
    let store = match data_dir {
        Some(dir) => Store::open(dir)?,
        None => Store::in_memory(),
    };
    Ok(Arc::new(AppState {
        engine: Arc::new(engine),
        store,
        token,
    }))
}

/// Binds and serves until ctrl-c.
pub async fn serve(engine: Engine, options: ServeOptions) -> Result<(), ServeError> {
    let state = build_state(engine, options.data_dir.as_deref(), options.token)?;
    let app = router(state, options.static_dir);
    let listener = tokio::net::TcpListener::bind(options.addr)
        .await
        .map_err(|source| ServeError::Bind {
            addr: options.addr,
            source,
        })?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
