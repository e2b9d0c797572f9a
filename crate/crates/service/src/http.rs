//! HTTP transport: JSON bodies, PNG for images, [`ApiError`] on failure.
//!
//! | method | path | operation |
//! |---|---|---|
//! | POST | `/panels` (PNG body) | create_panel |
//! | GET | `/panels/{panel_id}` | panel record |
//! | GET | `/panels/{panel_id}/regions` | prepared regions |
//! | POST | `/panels/{panel_id}/detect` | auto_detect |
//! | POST | `/panels/{panel_id}/regions` | manual_region |
//! | POST | `/panels/{panel_id}/compose` | compose_panel |
//! | GET | `/engines` | available engines |
//! | POST | `/sessions` | create_mapping |
//! | GET | `/sessions/{id}` | get_status |
//! | POST | `/sessions/{id}/frames` | request_frames |
//! | GET | `/sessions/{id}/frames/{index}?size=N` | get_frame |
//! | PUT | `/sessions/{id}/params` | set_session_params |
//! | POST | `/sessions/{id}/keyframe` | select_keyframe |
//! | POST | `/sessions/{id}/commit` | commit_session |
//! | GET | `/export/{id}` | export |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use mangaface_core::Error;
use serde::{Deserialize, Serialize};

use crate::api::*;

/// Uploads (panels, base64 frame lists) can be large.
const BODY_LIMIT: usize = 512 * 1024 * 1024;

pub struct HttpError(Error);

impl From<Error> for HttpError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::FrameNotGenerated(_)
        | Error::NothingSelected
        | Error::StaleSelection(_)
        | Error::SessionCommitted
        | Error::InvalidState { .. } => StatusCode::CONFLICT,
        Error::AdapterUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        Error::EngineFailure(_) | Error::AdapterProtocolError(_) => StatusCode::BAD_GATEWAY,
        Error::IoFailure { .. } | Error::IntegrityError { .. } | Error::MissingManifest(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (status_for(&self.0), Json(ApiError::from(&self.0))).into_response()
    }
}

type Shared = Arc<Service>;
type JsonResult<T> = Result<Json<T>, HttpError>;

/// Runs a blocking service call off the async workers.
async fn blocking<T: Send + 'static>(
    service: Shared,
    f: impl FnOnce(&Service) -> mangaface_core::Result<T> + Send + 'static,
) -> Result<T, HttpError> {
    match tokio::task::spawn_blocking(move || f(&service)).await {
        Ok(r) => r.map_err(HttpError),
        Err(e) => Err(HttpError(Error::EngineFailure(format!("worker panicked: {e}")))),
    }
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn create_panel(State(s): State<Shared>, body: Bytes) -> Result<Response, HttpError> {
    let created = blocking(s, move |s| s.create_panel(body.to_vec())).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_panel(
    State(s): State<Shared>,
    Path(panel_id): Path<String>,
) -> JsonResult<mangaface_core::store::PanelRecord> {
    Ok(Json(s.get_panel(&panel_id)?))
}

async fn list_regions(
    State(s): State<Shared>,
    Path(panel_id): Path<String>,
) -> JsonResult<Vec<mangaface_core::PreparedRegion>> {
    Ok(Json(s.list_regions(&panel_id)?))
}

async fn auto_detect(
    State(s): State<Shared>,
    Path(panel_id): Path<String>,
    body: Option<Json<AutoDetectRequest>>,
) -> JsonResult<AutoDetectResponse> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    Ok(Json(blocking(s, move |s| s.auto_detect(&panel_id, &req)).await?))
}

async fn manual_region(
    State(s): State<Shared>,
    Path(panel_id): Path<String>,
    Json(req): Json<ManualRegionRequest>,
) -> Result<Response, HttpError> {
    let region = blocking(s, move |s| s.manual_region(&panel_id, &req)).await?;
    Ok((StatusCode::CREATED, Json(region)).into_response())
}

async fn compose_panel(
    State(s): State<Shared>,
    Path(panel_id): Path<String>,
    Json(req): Json<ComposeRequest>,
) -> Result<Response, HttpError> {
    let out = blocking(s, move |s| s.compose_panel(&panel_id, &req)).await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn list_engines(State(s): State<Shared>) -> Result<Json<EnginesResponse>, HttpError> {
    Ok(Json(blocking(s, |s| Ok(s.list_engines())).await?))
}

async fn create_mapping(
    State(s): State<Shared>,
    Json(req): Json<CreateMappingRequest>,
) -> Result<Response, HttpError> {
    let created = blocking(s, move |s| s.create_mapping(&req)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_status(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> JsonResult<mangaface_core::SessionSnapshot> {
    Ok(Json(s.get_status(&id)?))
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FramesBody {
    pub indices: Vec<usize>,
}

async fn request_frames(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<FramesBody>,
) -> Result<Response, HttpError> {
    let out = s.request_frames(&id, &req.indices)?;
    Ok((StatusCode::ACCEPTED, Json(out)).into_response())
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    size: Option<u32>,
}

async fn get_frame(
    State(s): State<Shared>,
    Path((id, index)): Path<(String, usize)>,
    Query(q): Query<FrameQuery>,
) -> Result<Response, HttpError> {
    Ok(png(blocking(s, move |s| s.get_frame(&id, index, q.size)).await?))
}

async fn set_params(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SetParamsRequest>,
) -> JsonResult<mangaface_core::SessionSnapshot> {
    Ok(Json(blocking(s, move |s| s.set_session_params(&id, &req)).await?))
}

#[derive(Debug, Deserialize, Serialize)]
pub struct KeyframeBody {
    pub index: usize,
}

async fn select_keyframe(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<KeyframeBody>,
) -> JsonResult<mangaface_core::SessionSnapshot> {
    Ok(Json(blocking(s, move |s| s.select_keyframe(&id, req.index)).await?))
}

async fn commit_session(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, HttpError> {
    let record = blocking(s, move |s| s.commit_session(&id)).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn export(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, HttpError> {
    Ok(png(blocking(s, move |s| s.export(&id)).await?))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/panels", post(create_panel))
        .route("/panels/{panel_id}", get(get_panel))
        .route("/panels/{panel_id}/regions", get(list_regions).post(manual_region))
        .route("/panels/{panel_id}/detect", post(auto_detect))
        .route("/panels/{panel_id}/compose", post(compose_panel))
        .route("/engines", get(list_engines))
        .route("/sessions", post(create_mapping))
        .route("/sessions/{id}", get(get_status))
        .route("/sessions/{id}/frames", post(request_frames))
        .route("/sessions/{id}/frames/{index}", get(get_frame))
        .route("/sessions/{id}/params", put(set_params))
        .route("/sessions/{id}/keyframe", post(select_keyframe))
        .route("/sessions/{id}/commit", post(commit_session))
        .route("/export/{id}", get(export))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<Service>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
