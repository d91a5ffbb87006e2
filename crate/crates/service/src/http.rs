//! HTTP+JSON front end.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::report::ReportFilter;
use crate::state::{EventBatch, Service, SuggestRequest};
use crate::ServiceError;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownProblem(_) => StatusCode::NOT_FOUND,
            ServiceError::UnknownArm(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::SeqRegression(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct CreateSession {
    participant_label: String,
    problem_id: String,
}

async fn create_session(
    State(svc): State<Arc<Service>>,
    Json(body): Json<CreateSession>,
) -> Result<impl IntoResponse, ServiceError> {
    let view = blocking(svc, move |s| s.create_session(&body.participant_label, &body.problem_id)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(svc.session_view(&id)?))
}

async fn suggest(
    State(svc): State<Arc<Service>>,
    Json(req): Json<SuggestRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(svc, move |s| s.suggest(&req)).await?))
}

async fn events(
    State(svc): State<Arc<Service>>,
    Json(batch): Json<EventBatch>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(svc, move |s| s.record_events(&batch)).await?))
}

async fn report(
    State(svc): State<Arc<Service>>,
    Query(filter): Query<ReportFilter>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(svc, move |s| s.report(&filter)).await?))
}

async fn problem(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(svc.problem(&id)?))
}

async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

/// Builds the API router; static editor assets are served under `/ui/`
/// when `ui_dir` is given.
pub fn router(service: Arc<Service>, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/suggest", post(suggest))
        .route("/v1/events", post(events))
        .route("/v1/report", get(report))
        .route("/v1/problems/{id}", get(problem));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(service: Arc<Service>, ui_dir: Option<PathBuf>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service, ui_dir)).await
}
