//! HTTP/JSON service over the guardrail pipeline and the review queue.
//!
//! Review API under `/api`; the configured model adapter is also exposed over
//! the inference protocol under `/v1`, so one process can stand in for an
//! external model server.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pvguard_core::config::PipelineConfig;
use pvguard_core::icsr::{parse_document, DocumentFormat};
use pvguard_core::model::{protocol_response, AdapterError, HealthResponse, TranslateRequest};
use pvguard_core::pipeline::{
    render_annotated_html, AdjudicationRecord, Engine, EngineError, GuardrailReport, ReviewCase, ReviewError,
    QueueItem, ReviewStatus, ReviewStore, ReviewerAssessment, StoreError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(code = %self.code, "{}", self.message);
        }
        (status, Json(json!({"error": {"code": self.code, "message": self.message}}))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::UnknownCase(_) => (StatusCode::NOT_FOUND, "unknown_case"),
            ReviewError::DuplicateReviewer { .. } => (StatusCode::CONFLICT, "duplicate_reviewer"),
            ReviewError::CaseClosed { .. } => (StatusCode::CONFLICT, "case_closed"),
            ReviewError::InvalidAssessment(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_assessment"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Review(r) => r.into(),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", other.to_string()),
        }
    }
}

impl From<AdapterError> for ApiError {
    fn from(e: AdapterError) -> Self {
        let (status, code) = match &e {
            AdapterError::EmptyInput => (StatusCode::BAD_REQUEST, "empty_input"),
            AdapterError::GenerationFailed(_) => (StatusCode::UNPROCESSABLE_ENTITY, "generation_failed"),
            AdapterError::AdapterUnavailable(_) | AdapterError::ProtocolError(_) => {
                (StatusCode::SERVICE_UNAVAILABLE, "adapter_unavailable")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    store: Arc<ReviewStore>,
    token: Option<Arc<str>>,
    queue_seed: u64,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, store: Arc<ReviewStore>, token: Option<String>) -> Self {
        let queue_seed = engine.config.seed;
        Self {
            engine,
            store,
            token: token.map(Into::into),
            queue_seed,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn authorize(&self, headers: &HeaderMap) -> ApiResult<()> {
        let Some(token) = &self.token else {
            return Ok(());
        };
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        match given {
            Some(g) if g == &**token => Ok(()),
            _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "a valid bearer token is required")),
        }
    }

    /// Runs blocking work (pipeline, store) off the async workers.
    async fn blocking<T: Send + 'static>(
        &self,
        f: impl FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
    ) -> ApiResult<T> {
        let state = self.clone();
        tokio::task::spawn_blocking(move || f(&state))
            .await
            .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    status: Option<String>,
}

fn fnv1a(seed: u64, text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325 ^ seed, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

async fn ingest(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<GuardrailReport>)> {
    s.authorize(&headers)?;
    let doc = parse_document(&body, DocumentFormat::Json)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_document", e.to_string()))?;
    s.blocking(move |s| {
        if let Some(existing) = s.store.get(&doc.case_id)? {
            return Ok((StatusCode::OK, Json(existing.report)));
        }
        let report = s.engine.process(&doc);
        let case = ReviewCase::new(report.clone(), doc.narrative.clone());
        Ok(match s.store.insert_new(&case)? {
            Some(existing) => (StatusCode::OK, Json(existing.report)),
            None => (StatusCode::CREATED, Json(report)),
        })
    })
    .await
}

async fn get_case(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ReviewCase>> {
    s.blocking(move |s| s.store.get(&id)?.map(Json).ok_or_else(|| ReviewError::UnknownCase(id).into())).await
}

async fn queue(State(s): State<AppState>, Query(q): Query<QueueQuery>) -> ApiResult<Json<Vec<QueueItem>>> {
    let status = q
        .status
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<ReviewStatus>())
        .transpose()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e))?;
    s.blocking(move |s| {
        let mut items: Vec<QueueItem> = s.store.list(status)?.iter().map(QueueItem::from).collect();
        items.sort_by_key(|i| (fnv1a(s.queue_seed, &i.case_id), i.case_id.clone()));
        Ok(Json(items))
    })
    .await
}

async fn submit_assessment(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ReviewCase>> {
    s.authorize(&headers)?;
    let assessment: ReviewerAssessment = parse_body(&body)?;
    s.blocking(move |s| Ok(Json(s.store.update(&id, |c| c.submit_assessment(assessment))?.0))).await
}

/// Records the adjudicator's verdict and closes the case.
async fn adjudicate(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ReviewCase>> {
    s.authorize(&headers)?;
    let record: AdjudicationRecord = parse_body(&body)?;
    s.blocking(move |s| {
        let (case, ()) = s.store.update(&id, |c| {
            c.adjudicate(record)?;
            c.close()
        })?;
        Ok(Json(case))
    })
    .await
}

async fn close(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Json<ReviewCase>> {
    s.authorize(&headers)?;
    s.blocking(move |s| Ok(Json(s.store.update(&id, ReviewCase::close)?.0))).await
}

async fn annotated(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Html<String>> {
    s.blocking(move |s| {
        let case = s.store.get(&id)?.ok_or_else(|| ApiError::from(ReviewError::UnknownCase(id)))?;
        render_annotated_html(&case.report, &case.source_text, &case.target_text)
            .map(Html)
            .map_err(|e| ApiError::internal(e.to_string()))
    })
    .await
}

async fn model_health(State(s): State<AppState>) -> Json<HealthResponse> {
    Json(HealthResponse {
        version: env!("CARGO_PKG_VERSION").to_string(),
        embedding_dim: s.engine.adapter().embedding_dim(),
    })
}

async fn model_translate(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: TranslateRequest = parse_body(&body)?;
    s.blocking(move |s| {
        let adapter = s.engine.adapter();
        if req.config.get("mode").and_then(Value::as_str) == Some("embed_only") {
            return Ok(Json(json!({"source_embeddings": adapter.embed_source(&req.input)?})));
        }
        Ok(Json(protocol_response(&adapter.translate(&req.input, &req.config)?)))
    })
    .await
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/cases", post(ingest))
        .route("/api/cases/{id}", get(get_case))
        .route("/api/cases/{id}/assessments", post(submit_assessment))
        .route("/api/cases/{id}/adjudication", post(adjudicate))
        .route("/api/cases/{id}/close", post(close))
        .route("/api/cases/{id}/annotated", get(annotated))
        .route("/api/queue", get(queue))
        .route("/v1/health", get(model_health))
        .route("/v1/translate", post(model_translate))
        .fallback(fallback)
        .with_state(state)
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Review store file; in memory when absent.
    pub store_path: Option<PathBuf>,
    pub token: Option<String>,
}

#[derive(Debug)]
pub enum ServeError {
    Engine(EngineError),
    Store(StoreError),
    Io(std::io::Error),
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Engine(e) => e.fmt(f),
            Self::Store(e) => e.fmt(f),
            Self::Io(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for ServeError {}

/// Builds the engine and store. Blocking; run outside the async workers.
pub fn build_state(config: PipelineConfig, opts: &ServeOptions) -> Result<AppState, ServeError> {
    let engine = Engine::from_config(config).map_err(ServeError::Engine)?;
    let store = match &opts.store_path {
        Some(p) => ReviewStore::open(p),
        None => ReviewStore::in_memory(),
    }
    .map_err(ServeError::Store)?;
    Ok(AppState::new(Arc::new(engine), Arc::new(store), opts.token.clone()))
}

/// Serves until `shutdown` resolves; `on_bound` receives the bound address.
pub async fn serve(
    config: PipelineConfig,
    addr: SocketAddr,
    opts: ServeOptions,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let state = tokio::task::spawn_blocking(move || build_state(config, &opts))
        .await
        .map_err(|e| ServeError::Io(std::io::Error::other(e)))??;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(ServeError::Io)?;
    on_bound(listener.local_addr().map_err(ServeError::Io)?);
    let result = axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await;
    // May own a blocking HTTP client.
    let _ = tokio::task::spawn_blocking(move || drop(state)).await;
    result.map_err(ServeError::Io)
}
