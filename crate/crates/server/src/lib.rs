//! HTTP front end of the judging service.
//!
//! Juror routes are keyed by session id. Admin routes need
//! `Authorization: Bearer <admin_token>`. Errors come back as
//! `{"error": <code>, "message": <text>}`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serpeval_core::study::{JudgmentInput, StudyError, StudyService};

/// Served documents may not run scripts or load anything from elsewhere.
pub const SNAPSHOT_CSP: &str = "sandbox; default-src 'none'; img-src data:; style-src 'unsafe-inline'";

#[derive(Clone)]
struct AppState {
    study: Arc<StudyService>,
    admin_token: Arc<str>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let (status, code) = match &e {
            StudyError::InvalidCode => (StatusCode::UNAUTHORIZED, "invalid-code"),
            StudyError::UnknownSession => (StatusCode::NOT_FOUND, "unknown-session"),
            StudyError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown-task"),
            StudyError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown-item"),
            StudyError::ForeignResult(_) => (StatusCode::CONFLICT, "foreign-result"),
            StudyError::NoTask => (StatusCode::CONFLICT, "no-task"),
            StudyError::LeaseLost => (StatusCode::CONFLICT, "lease-lost"),
            StudyError::TaskComplete(_) => (StatusCode::CONFLICT, "task-complete"),
            StudyError::DuplicateVerdict { .. } => (StatusCode::CONFLICT, "duplicate-verdict"),
            StudyError::InvalidJudgment(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-judgment"),
            StudyError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
            StudyError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "study store failure");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad-request", r.body_text())
    }
}

/// Service calls append to files and take the study lock, so they run off
/// the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&StudyService) -> Result<T, StudyError> + Send + 'static,
{
    let study = state.study.clone();
    tokio::task::spawn_blocking(move || f(&study))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
struct NewSession {
    access_code: String,
    /// Where a voucher should go; optional.
    #[serde(default)]
    contact: Option<String>,
}

#[derive(Debug, Serialize)]
struct SessionCreated {
    session_id: String,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<NewSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(req) = body?;
    let session_id = blocking(&state, move |s| {
        let session = s.open_session(&req.access_code)?;
        if let Some(c) = req.contact.as_deref().filter(|c| !c.trim().is_empty()) {
            s.attach_contact(&session.session_id, c)?;
        }
        Ok(session.session_id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id })))
}

async fn next_task(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    match blocking(&state, move |s| s.next_task(&id)).await? {
        Some(task) => Ok(Json(task).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn record_judgment(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<JudgmentInput>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(input) = body?;
    let ack = blocking(&state, move |s| s.record_judgment(&id, input)).await?;
    Ok(Json(ack).into_response())
}

async fn snapshot(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let Some((bytes, meta)) = blocking(&state, move |s| s.document(&id)).await? else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown-snapshot", "no such snapshot"));
    };
    let ctype = HeaderValue::from_str(&meta.content_type)
        .unwrap_or(HeaderValue::from_static("application/octet-stream"));
    Ok((
        [
            (header::CONTENT_TYPE, ctype),
            (header::CONTENT_SECURITY_POLICY, HeaderValue::from_static(SNAPSHOT_CSP)),
            (header::X_CONTENT_TYPE_OPTIONS, HeaderValue::from_static("nosniff")),
            (header::REFERRER_POLICY, HeaderValue::from_static("no-referrer")),
        ],
        Body::from(bytes),
    )
        .into_response())
}

async fn require_admin(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(t) if constant_time_eq(t.as_bytes(), state.admin_token.as_bytes()) => next.run(req).await,
        _ => ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "admin token required").into_response(),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn run_progress(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    if id != state.study.run().run_id {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown-run", format!("no run {id}")));
    }
    let progress = blocking(&state, |s| Ok(s.progress())).await?;
    Ok(Json(progress).into_response())
}

/// A verdict names either an anonymized item or a (query, engine) pair.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum VerdictTarget {
    Item { item_id: String },
    Pair { query: String, engine_id: String },
}

#[derive(Debug, Deserialize)]
struct VerdictRequest {
    #[serde(flatten)]
    target: VerdictTarget,
    correct: bool,
    assessor: String,
}

#[derive(Debug, Serialize)]
struct VerdictRecorded {
    recorded: usize,
}

async fn record_verdict(
    State(state): State<AppState>,
    body: Result<Json<VerdictRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<VerdictRecorded>), ApiError> {
    let Json(req) = body?;
    let recorded = blocking(&state, move |s| match req.target {
        VerdictTarget::Item { item_id } => s.record_item_verdict(&item_id, req.correct, &req.assessor),
        VerdictTarget::Pair { query, engine_id } => s
            .record_verdict(&query, &engine_id, req.correct, &req.assessor)
            .map(|_| 1),
    })
    .await?;
    Ok((StatusCode::CREATED, Json(VerdictRecorded { recorded })))
}

#[derive(Debug, Deserialize)]
struct PendingQuery {
    after: Option<u64>,
}

async fn pending_vouchers(
    State(state): State<AppState>,
    Query(q): Query<PendingQuery>,
) -> Result<Response, ApiError> {
    let v = blocking(&state, move |s| Ok(s.pending_vouchers(q.after))).await?;
    Ok(Json(v).into_response())
}

async fn pending_verdicts(State(state): State<AppState>) -> Result<Response, ApiError> {
    let v = blocking(&state, |s| Ok(s.nav_items())).await?;
    Ok(Json(v).into_response())
}

pub fn router(study: Arc<StudyService>, admin_token: &str) -> Router {
    let state = AppState {
        study,
        admin_token: admin_token.into(),
    };
    let admin = Router::new()
        .route("/runs/{id}/progress", get(run_progress))
        .route("/verdicts", post(record_verdict))
        .route("/verdicts/pending", get(pending_verdicts))
        .route("/vouchers/pending", get(pending_vouchers))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_admin));
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/task", get(next_task))
        .route("/sessions/{id}/judgments", post(record_judgment))
        .route("/snapshots/{id}", get(snapshot))
        .merge(admin)
        .with_state(state)
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
