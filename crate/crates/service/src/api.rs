use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use cosmos_core::corpus::{annotations_jsonl, AnnotationRecord, HumanLabel, TripletRef};
use cosmos_core::ooc::{Thresholds, Verdict};
use cosmos_core::pipeline::{load_image, Grounding, OocDetector};
use cosmos_core::util::sha256_hex;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::error::{ApiError, ApiResult};
use crate::store::{QueueItem, QueueStatus, SqliteStore};

/// Shared handler state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    detector: Option<Arc<OocDetector>>,
    store: Arc<SqliteStore>,
    token: Option<String>,
    max_image_bytes: usize,
}

impl AppState {
    pub fn new(detector: Option<OocDetector>, store: SqliteStore, token: Option<String>, max_image_bytes: usize) -> Self {
        Self {
            detector: detector.map(Arc::new),
            store: Arc::new(store),
            token,
            max_image_bytes,
        }
    }

    pub fn store(&self) -> &SqliteStore {
        &self.store
    }

    fn detector(&self) -> ApiResult<Arc<OocDetector>> {
        self.detector
            .clone()
            .ok_or_else(|| ApiError::unavailable("no model checkpoint loaded"))
    }
}

/// Runs blocking work (model inference, SQLite) off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

/// JSON body whose rejections render as API errors with the field named.
struct ApiJson<T>(T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(json_rejection(e)),
        }
    }
}

fn json_rejection(e: JsonRejection) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        return ApiError::too_large(e.body_text());
    }
    let text = e.body_text();
    let field = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|p| text.split_once(p))
        .and_then(|(_, rest)| rest.split_once('`'))
        .map(|(f, _)| f.to_string());
    ApiError {
        field,
        ..ApiError::bad_request(text)
    }
}

/// `/predict` input. Multipart requests may carry the same fields as text
/// parts (or one `json` part) plus an `image` file part.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub image_id: Option<String>,
    pub caption1: Option<String>,
    pub caption2: Option<String>,
    pub thresholds: Option<Thresholds>,
}

fn required<'a>(v: &'a Option<String>, field: &str) -> ApiResult<&'a str> {
    match v.as_deref().map(str::trim) {
        None => Err(ApiError::field(field, format!("{field} is required"))),
        Some("") => Err(ApiError::field(field, format!("{field} is empty"))),
        Some(_) => Ok(v.as_deref().expect("checked")),
    }
}

fn decode_image(bytes: &[u8]) -> ApiResult<RgbImage> {
    image::load_from_memory(bytes)
        .map(|i| i.to_rgb8())
        .map_err(|e| ApiError::field("image", format!("undecodable image: {e}")))
}

async fn read_multipart(mut mp: Multipart, max_image_bytes: usize) -> ApiResult<(PredictRequest, Option<Vec<u8>>)> {
    let mut req = PredictRequest::default();
    let mut image = None;
    let part_err = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::too_large(format!("request exceeds {max_image_bytes} image bytes"))
        } else {
            ApiError::bad_request(e.body_text())
        }
    };
    let mut t_i = None;
    let mut t_s = None;
    while let Some(field) = mp.next_field().await.map_err(part_err)? {
        let name = field.name().unwrap_or_default().to_string();
        if name == "image" {
            let bytes = field.bytes().await.map_err(part_err)?;
            if bytes.len() > max_image_bytes {
                return Err(ApiError::too_large(format!(
                    "image of {} bytes exceeds the {max_image_bytes} byte limit",
                    bytes.len()
                )));
            }
            image = Some(bytes.to_vec());
            continue;
        }
        let text = field.text().await.map_err(part_err)?;
        let number = |field: &str, v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| ApiError::field(field, format!("{field} is not a number")))
        };
        match name.as_str() {
            "json" => {
                req = serde_json::from_str(&text).map_err(|e| ApiError::field("json", e.to_string()))?;
            }
            "image_id" => req.image_id = Some(text),
            "caption1" => req.caption1 = Some(text),
            "caption2" => req.caption2 = Some(text),
            "thresholds" => {
                req.thresholds =
                    Some(serde_json::from_str(&text).map_err(|e| ApiError::field("thresholds", e.to_string()))?)
            }
            "t_i" => t_i = Some(number("t_i", &text)?),
            "t_s" => t_s = Some(number("t_s", &text)?),
            other => return Err(ApiError::field(other, format!("unknown form field {other:?}"))),
        }
    }
    if t_i.is_some() || t_s.is_some() {
        let base = req.thresholds.unwrap_or_default();
        req.thresholds = Some(Thresholds {
            t_i: t_i.unwrap_or(base.t_i),
            t_s: t_s.unwrap_or(base.t_s),
        });
    }
    Ok((req, image))
}

async fn predict(State(state): State<AppState>, headers: HeaderMap, req: Request) -> ApiResult<Json<Verdict>> {
    let detector = state.detector()?;
    let is_multipart = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (body, image_bytes) = if is_multipart {
        let mp = Multipart::from_request(req, &state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        read_multipart(mp, state.max_image_bytes).await?
    } else {
        let ApiJson(body) = ApiJson::<PredictRequest>::from_request(req, &state).await?;
        (body, None)
    };
    let c1 = required(&body.caption1, "caption1")?.to_string();
    let c2 = required(&body.caption2, "caption2")?.to_string();
    let thresholds = body.thresholds.unwrap_or_default();
    thresholds
        .validate()
        .map_err(|e| ApiError::field("thresholds", e.to_string()))?;
    let (image_id, source) = match (image_bytes, body.image_id) {
        (Some(bytes), id) => (id.unwrap_or_else(|| format!("upload-{}", &sha256_hex(&bytes)[..16])), Ok(bytes)),
        (None, Some(id)) => {
            let path = known_image(&state, &id).await?;
            (id, Err(path))
        }
        (None, None) => return Err(ApiError::field("image", "provide an image file part or an image_id")),
    };
    let verdict = blocking(move || {
        let image = match source {
            Ok(bytes) => decode_image(&bytes)?,
            Err(path) => load_image(&path)?,
        };
        Ok(detector.detect(&image_id, &image, &c1, &c2, thresholds)?)
    })
    .await?;
    Ok(Json(verdict))
}

async fn known_image(state: &AppState, image_id: &str) -> ApiResult<PathBuf> {
    let store = state.store.clone();
    let id = image_id.to_string();
    blocking(move || store.image_path(&id))
        .await?
        .ok_or_else(|| ApiError::not_found(format!("unknown image {image_id:?}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueueQuery {
    status: Option<String>,
    limit: Option<usize>,
    t_i: Option<f64>,
    t_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct QueueView {
    #[serde(flatten)]
    item: QueueItem,
    image_url: String,
}

const MAX_QUEUE_LIMIT: usize = 1000;

async fn queue(State(state): State<AppState>, query: Result<Query<QueueQuery>, axum::extract::rejection::QueryRejection>) -> ApiResult<Json<Vec<QueueView>>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let status = match q.status.as_deref() {
        None | Some("all") => None,
        Some(s) => Some(QueueStatus::parse(s).ok_or_else(|| {
            ApiError::field("status", format!("status must be pending, reviewed, skipped or all, got {s:?}"))
        })?),
    };
    let limit = q.limit.unwrap_or(50).min(MAX_QUEUE_LIMIT);
    let thresholds = match (q.t_i, q.t_s) {
        (None, None) => None,
        (i, s) => {
            let d = Thresholds::default();
            Some(
                Thresholds::new(i.unwrap_or(d.t_i), s.unwrap_or(d.t_s))
                    .map_err(|e| ApiError::field("thresholds", e.to_string()))?,
            )
        }
    };
    let store = state.store.clone();
    let items = blocking(move || store.queue(status, limit)).await?;
    Ok(Json(
        items
            .into_iter()
            .map(|mut item| {
                // Only the decision depends on thresholds; evidence is cached.
                if let (Some(t), Some(v)) = (thresholds, item.verdict.as_mut()) {
                    *v = v.with_thresholds(t);
                }
                QueueView {
                    image_url: format!("/images/{}", item.triplet.image_id),
                    item,
                }
            })
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
struct AnnotationRequest {
    triplet_ref: TripletRef,
    human_label: HumanLabel,
    annotator_id: String,
    #[serde(default)]
    note: Option<String>,
}

async fn annotate(State(state): State<AppState>, ApiJson(body): ApiJson<AnnotationRequest>) -> ApiResult<(StatusCode, Json<AnnotationRecord>)> {
    if body.annotator_id.trim().is_empty() {
        return Err(ApiError::field("annotator_id", "annotator_id is empty"));
    }
    let record = AnnotationRecord {
        triplet_ref: body.triplet_ref,
        human_label: body.human_label,
        annotator_id: body.annotator_id,
        timestamp: Utc::now(),
        note: body.note,
    };
    let store = state.store.clone();
    let stored = blocking(move || store.annotate(record)).await?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn export(State(state): State<AppState>) -> ApiResult<Response> {
    let store = state.store.clone();
    let body = blocking(move || Ok(annotations_jsonl(store.all_annotations()?)?)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

#[derive(Debug, Deserialize)]
struct GroundingQuery {
    caption: Option<String>,
}

async fn grounding(
    State(state): State<AppState>,
    UrlPath(image_id): UrlPath<String>,
    Query(q): Query<GroundingQuery>,
) -> ApiResult<Json<Grounding>> {
    let path = known_image(&state, &image_id).await?;
    let caption = required(&q.caption, "caption")?.to_string();
    let detector = state.detector()?;
    let g = blocking(move || {
        let image = load_image(&path)?;
        Ok(detector.ground(&image_id, &image, &caption)?)
    })
    .await?;
    Ok(Json(g))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn image_file(State(state): State<AppState>, UrlPath(image_id): UrlPath<String>) -> ApiResult<Response> {
    let path = known_image(&state, &image_id).await?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::not_found(format!("image file for {image_id:?}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn health(State(state): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let store = state.store.clone();
    let pending = blocking(move || store.count(QueueStatus::Pending)).await?;
    Ok(Json(json!({
        "status": "ok",
        "model_loaded": state.detector.is_some(),
        "pending": pending,
    })))
}

/// Accepts `Authorization: Bearer <token>` or `?access_token=<token>` (for
/// `<img>` tags in the UI).
async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(expected) = state.token.as_deref() else {
        return next.run(req).await;
    };
    let from_header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let from_query = req.uri().query().and_then(|q| {
        q.split('&')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == "access_token")
            .map(|(_, v)| v)
    });
    if from_header == Some(expected) || from_query == Some(expected) {
        next.run(req).await
    } else {
        ApiError::unauthorized().into_response()
    }
}

async fn ui_missing() -> ApiError {
    ApiError::not_found("review UI bundle not installed; set COSMOS_UI_DIR")
}

pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    // Multipart framing adds a little on top of the image itself.
    let body_limit = state.max_image_bytes + 64 * 1024;
    let protected = Router::new()
        .route("/predict", post(predict))
        .route("/queue", get(queue))
        .route("/annotations", post(annotate))
        .route("/export", get(export))
        .route("/grounding/{image_id}", get(grounding))
        .route("/images/{image_id}", get(image_file))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let app = Router::new()
        .merge(protected)
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(body_limit));
    let app = match ui_dir {
        Some(dir) => app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.route("/ui", get(ui_missing)).route("/ui/{*rest}", get(ui_missing)),
    };
    app.with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
