//! Axum routes over [`Service`]. Pipeline work runs on the blocking pool.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use screenrec_core::constraints::ConstraintSet;
use screenrec_core::session::ScreenshotKind;

use crate::experiment::{run_experiment_request, ExperimentError, ExperimentRequest};
use crate::service::{EventRequest, Mode, Service, ServiceError};

const MAX_UPLOAD: usize = 32 * 1024 * 1024;

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, body: json!({"error": "bad_request", "message": message.into()}) }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            ServiceError::SessionNotFound(_) => (StatusCode::NOT_FOUND, "session_not_found"),
            ServiceError::SessionExists(_) => (StatusCode::CONFLICT, "session_exists"),
            ServiceError::ValidationRejected(report) => {
                return ApiError {
                    status: StatusCode::UNPROCESSABLE_ENTITY,
                    body: json!({"error": "validation_rejected", "message": message, "report": report}),
                }
            }
            ServiceError::BackendUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable"),
            ServiceError::NoModelConfigured => (StatusCode::CONFLICT, "no_model_configured"),
            ServiceError::EmptySession(_) => (StatusCode::CONFLICT, "empty_session"),
            ServiceError::BadRequest(_) | ServiceError::Session(_) | ServiceError::Catalog(_) => {
                (StatusCode::BAD_REQUEST, "bad_request")
            }
            ServiceError::Summarizer(_) => (StatusCode::BAD_GATEWAY, "summarizer_failed"),
            ServiceError::Choice(_) | ServiceError::Model(_) | ServiceError::Rerank(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "pipeline_failed")
            }
            ServiceError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error"),
        };
        ApiError { status, body: json!({"error": code, "message": message}) }
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let status = match e {
            ExperimentError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError { status, body: json!({"error": "experiment_failed", "message": e.to_string()}) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `Json` whose rejections use the service's error body.
struct ApiJson<T>(T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let Json(value) = Json::<T>::from_request(req, state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        Ok(ApiJson(value))
    }
}

async fn blocking<T, F>(service: &Arc<Service>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ApiError> + Send + 'static,
{
    let service = service.clone();
    tokio::task::spawn_blocking(move || f(&service)).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({"error": "internal", "message": e.to_string()}),
    })?
}

pub fn router(service: Arc<Service>) -> Router {
    let ui = ServeDir::new(service.config().ui_dir.clone());
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", post(post_event))
        .route("/sessions/{id}/summary", get(get_summary))
        .route("/sessions/{id}/constraints", put(put_constraints))
        .route("/sessions/{id}/recommendations", get(get_recommendations))
        .route("/catalog/import", post(import_catalog))
        .route("/experiments", post(post_experiment))
        .nest_service("/ui", ui)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .layer(TraceLayer::new_for_http())
        .with_state(service)
}

async fn healthz(State(service): State<Arc<Service>>) -> Json<serde_json::Value> {
    let catalog = service.catalog();
    Json(json!({"status": "ok", "catalog_version": catalog.version(), "catalog_items": catalog.len()}))
}

#[derive(Debug, Default, Deserialize)]
struct CreateSession {
    #[serde(default)]
    session_id: Option<String>,
}

/// The body is optional; without it the service picks an id.
async fn create_session(State(service): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let id = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        serde_json::from_slice::<CreateSession>(&body).map_err(|e| ApiError::bad_request(e.to_string()))?.session_id
    };
    let session = blocking(&service, move |s| Ok(s.create_session(id)?)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(service): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&service, move |s| Ok(s.session(&id)?)).await?))
}

async fn read_multipart_event(service: &Arc<Service>, mut form: Multipart) -> ApiResult<EventRequest> {
    let mut event = EventRequest::default();
    let mut upload = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "screenshot" => upload = Some(field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?),
            _ => {
                let text = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                match name.as_str() {
                    "item_id" => event.item_id = text,
                    "timestamp" => event.timestamp = Some(text.trim().parse().map_err(|_| ApiError::bad_request("timestamp must be an integer"))?),
                    "screenshot_key" => event.screenshot_key = Some(text),
                    "kind" => {
                        event.kind = Some(
                            serde_json::from_value::<ScreenshotKind>(json!(text.trim()))
                                .map_err(|_| ApiError::bad_request(format!("unknown screenshot kind `{text}`")))?,
                        )
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some(bytes) = upload {
        let store = service.screenshots().clone();
        let key = tokio::task::spawn_blocking(move || store.put(&bytes))
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?
            .map_err(|e| ApiError::from(ServiceError::Io(e)))?;
        event.screenshot_key = Some(key);
    }
    Ok(event)
}

/// Accepts a JSON event, or a multipart form with the same fields plus an
/// optional `screenshot` file part.
async fn post_event(State(service): State<Arc<Service>>, Path(id): Path<String>, request: Request) -> ApiResult<impl IntoResponse> {
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let event = if is_multipart {
        let form = Multipart::from_request(request, &()).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        read_multipart_event(&service, form).await?
    } else {
        ApiJson::<EventRequest>::from_request(request, &()).await?.0
    };
    let session = blocking(&service, move |s| Ok(s.append_event(&id, event)?)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_summary(State(service): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let summary = blocking(&service, move |s| Ok(s.summary(&id)?)).await?;
    Ok(Json(summary.unwrap_or_default()))
}

async fn put_constraints(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    ApiJson(constraints): ApiJson<ConstraintSet>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&service, move |s| Ok(s.put_overrides(&id, &constraints)?)).await?))
}

#[derive(Debug, Deserialize)]
struct RecommendationQuery {
    #[serde(default)]
    mode: Mode,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    10
}

async fn get_recommendations(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<RecommendationQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&service, move |s| Ok(s.orchestrate(&id, q.mode, q.k, None)?)).await?))
}

/// Body is the line-delimited catalog file.
async fn import_catalog(State(service): State<Arc<Service>>, body: String) -> ApiResult<impl IntoResponse> {
    let snapshot = blocking(&service, move |s| Ok(s.import_catalog_text(&body)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({"version": snapshot.version(), "items": snapshot.len()}))))
}

async fn post_experiment(State(service): State<Arc<Service>>, ApiJson(request): ApiJson<ExperimentRequest>) -> ApiResult<impl IntoResponse> {
    let outcome = blocking(&service, move |s| {
        let base = s.config().data_dir.clone();
        Ok(run_experiment_request(s, &request, &base)?)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "report_path": outcome.report_path,
            "csv_path": outcome.csv_path,
            "config_digest": outcome.report.provenance.config_digest,
            "dataset_digest": outcome.report.provenance.dataset_digest,
            "rows": outcome.report.rows,
        })),
    ))
}
