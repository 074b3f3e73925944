//! `/v1` routes.

use std::path::{Component, Path as FsPath};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hilc_core::detection::png_base64::{decode_png, encode_png};
use hilc_core::log::{parse_log, MemoryFrameStore};
use hilc_core::recognition::ActionModel;
use hilc_core::runtime::{run, BackendSpec, RunConfig, RunReport, VirtualDesktop, VirtualScenario};
use hilc_core::teaching::{Answer, Question, QuestionKind, TeachingConfig, TeachingError};
use image::GrayImage;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};

use crate::store::{lock, SessionHandle, SessionStore, SessionSummary};
use crate::{ServiceConfig, ServiceError};

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: SessionStore,
    model: Arc<ActionModel>,
    config: ServiceConfig,
    backend: Arc<AsyncMutex<()>>,
}

impl AppState {
    pub fn new(store: SessionStore, model: Arc<ActionModel>, config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                model,
                config,
                backend: Arc::new(AsyncMutex::new(())),
            }),
        }
    }

    /// Opens the store named by the config.
    pub fn open(config: ServiceConfig, model: Arc<ActionModel>) -> Result<Self, ServiceError> {
        let store = SessionStore::open(&config.store)?;
        Ok(Self::new(store, model, config))
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    /// Takes the execution backend; runs answer 503 while the guard lives.
    pub fn occupy_backend(&self) -> Option<OwnedMutexGuard<()>> {
        self.inner.backend.clone().try_lock_owned().ok()
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        self.inner.store.get(id).ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }
}

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Teaching(t) => match t {
                TeachingError::Conflict(_) | TeachingError::NoPending | TeachingError::NotReady => StatusCode::CONFLICT,
                TeachingError::Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
            ServiceError::Log(_) | ServiceError::Backend(_) | ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Busy => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Config(_) | ServiceError::Storage(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.0.status();
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn session_url(id: &str) -> String {
    format!("/v1/sessions/{id}")
}

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload_bytes;
    let v1 = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/question", get(get_question))
        .route("/sessions/{id}/questions/{qid}/heatmap", get(get_heatmap))
        .route("/sessions/{id}/answer", post(post_answer))
        .route("/sessions/{id}/review", post(post_review))
        .route("/sessions/{id}/script", get(get_script))
        .route("/sessions/{id}/script.json", get(get_script_json))
        .route("/sessions/{id}/frames/{frame}", get(get_frame))
        .route("/sessions/{id}/patches/{name}", get(get_patch))
        .route("/runs", post(post_run));
    Router::new()
        .nest("/v1", v1)
        .route("/ui", get(get_ui_index))
        .route("/ui/", get(get_ui_index))
        .route("/ui/{*path}", get(get_ui))
        .layer(DefaultBodyLimit::max(limit))
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let res = next.run(req).await;
    tracing::info!(
        %method,
        %path,
        status = res.status().as_u16(),
        elapsed_ms = start.elapsed().as_secs_f64() * 1000.0,
        "request"
    );
    res
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.starts_with('.') && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

/// Multipart fields: `log` (the log file), one `frame` per screenshot with
/// file name `<frame>.png`, and an optional `config` (teaching config JSON).
async fn create_session(State(app): State<AppState>, mut form: Multipart) -> ApiResult<Response> {
    let mut log: Option<(String, Bytes)> = None;
    let mut frames: Vec<(String, Bytes)> = Vec::new();
    let mut config = app.config().teaching.clone();
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::Invalid(e.to_string());
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let file = field.file_name().map(str::to_string);
        match name.as_str() {
            "log" => log = Some((file.unwrap_or_else(|| "log.jsonl".into()), field.bytes().await.map_err(bad)?)),
            "frame" => {
                let id = file
                    .as_deref()
                    .and_then(|f| f.strip_suffix(".png"))
                    .filter(|id| valid_name(id))
                    .ok_or_else(|| ServiceError::Invalid(format!("frame part needs a file name <frame>.png, got {file:?}")))?
                    .to_string();
                frames.push((id, field.bytes().await.map_err(bad)?));
            }
            "config" => {
                let bytes = field.bytes().await.map_err(bad)?;
                config = serde_json::from_slice::<TeachingConfig>(&bytes)
                    .map_err(|e| ServiceError::Invalid(format!("config: {e}")))?;
            }
            other => return Err(ServiceError::Invalid(format!("unexpected form field {other:?}")).into()),
        }
    }
    let (source, log) = log.ok_or_else(|| ServiceError::Invalid("missing log field".into()))?;
    let app2 = app.clone();
    let id = blocking(move || {
        let store = MemoryFrameStore::new();
        for (id, bytes) in frames {
            let img = decode_png(&bytes).map_err(|e| ServiceError::Invalid(format!("frame {id}: {e}")))?;
            store.insert(id, img);
        }
        let log = parse_log(&log[..], Some(&store))?;
        app2.store().create(&log, Arc::new(store), &app2.inner.model, config, &source)
    })
    .await?;
    let summary = lock(&app.session(&id)?).summary();
    let mut res = (StatusCode::CREATED, Json(summary)).into_response();
    res.headers_mut()
        .insert(header::LOCATION, HeaderValue::from_str(&session_url(&id)).expect("ascii id"));
    Ok(res)
}

#[derive(Serialize)]
struct SessionList {
    sessions: Vec<SessionSummary>,
    quarantined: Vec<crate::store::Quarantined>,
}

async fn list_sessions(State(app): State<AppState>) -> ApiResult<Json<SessionList>> {
    let list = blocking(move || {
        Ok(SessionList {
            sessions: app.store().list(),
            quarantined: app.store().quarantined(),
        })
    })
    .await?;
    Ok(Json(list))
}

#[derive(Serialize)]
struct PatchRef {
    name: String,
    url: String,
}

#[derive(Serialize)]
struct SessionView {
    #[serde(flatten)]
    summary: SessionSummary,
    segments: Vec<hilc_core::recognition::ActionSegment>,
    /// Text rendering of the current draft script.
    draft: String,
    patches: Vec<PatchRef>,
    history: Vec<hilc_core::teaching::HistoryEntry>,
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let h = app.session(&id)?;
    let view = blocking(move || {
        let s = lock(&h);
        let script = s.session.draft_script();
        Ok(SessionView {
            summary: s.summary(),
            segments: s.session.state.segments.clone(),
            draft: script.pseudo_script(),
            patches: script
                .patch_refs()
                .into_iter()
                .map(|(name, _)| PatchRef {
                    url: format!("{}/patches/{name}", session_url(&id)),
                    name,
                })
                .collect(),
            history: s.session.state.history.clone(),
        })
    })
    .await?;
    Ok(Json(view))
}

#[derive(Serialize)]
struct QuestionView {
    #[serde(flatten)]
    question: Question,
    #[serde(skip_serializing_if = "Option::is_none")]
    screenshot: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heatmap: Option<String>,
}

fn question_view(id: &str, q: &Question) -> QuestionView {
    let frame = match &q.kind {
        QuestionKind::AddSupporter { frame, .. }
        | QuestionKind::VerifyLoopTargets { frame, .. }
        | QuestionKind::StandbyRegion { frame, .. } => Some(frame),
        QuestionKind::FixTranscript { .. } => None,
    };
    QuestionView {
        screenshot: frame.map(|f| format!("{}/frames/{f}", session_url(id))),
        heatmap: frame.map(|_| format!("{}/questions/{}/heatmap", session_url(id), q.id)),
        question: q.clone(),
    }
}

/// 204 when nothing is pending.
async fn get_question(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let h = app.session(&id)?;
    let view = blocking(move || Ok(lock(&h).session.next_question().ok().map(|q| question_view(&id, q)))).await?;
    Ok(match view {
        Some(v) => Json(v).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

/// Detector scores on the question's screenshot, 0..1 mapped to 0..255 and
/// aligned so pixel (x, y) is the score of a target at (x, y).
async fn get_heatmap(State(app): State<AppState>, Path((id, qid)): Path<(String, u64)>) -> ApiResult<Response> {
    let h = app.session(&id)?;
    let bytes = blocking(move || {
        let s = lock(&h);
        let (w, hgt) = (s.session.clean.header.width, s.session.clean.header.height);
        let map = s
            .session
            .question_map(qid)?
            .ok_or_else(|| ServiceError::NotFound(format!("heatmap for question {qid}")))?;
        let small = map.to_heatmap(0.0, 1.0);
        let off = map.hotspot();
        let img = GrayImage::from_fn(w, hgt, |x, y| {
            let (mx, my) = (x as i64 - off.x as i64, y as i64 - off.y as i64);
            if mx >= 0 && my >= 0 && (mx as u32) < small.width() && (my as u32) < small.height() {
                *small.get_pixel(mx as u32, my as u32)
            } else {
                image::Luma([0])
            }
        });
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(out.into_inner())
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    /// Id of the question being answered; a stale id gives 409.
    pub question: u64,
    pub answer: Answer,
}

async fn post_answer(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let h = app.session(&id)?;
    let body = blocking(move || {
        let mut s = lock(&h);
        s.answer(req.question, req.answer)?;
        let next = s.session.next_question().ok().map(|q| question_view(&id, q));
        Ok(json!({ "session": s.summary(), "next": next }))
    })
    .await?;
    Ok(Json(body))
}

async fn post_review(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let h = app.session(&id)?;
    let view = blocking(move || {
        let mut s = lock(&h);
        let q = s.request_review()?;
        Ok(question_view(&id, s.session.question(q).expect("review question is pending")))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_script(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let h = app.session(&id)?;
    let body = blocking(move || {
        let (script, text) = lock(&h).session.synthesize_script()?;
        let value: serde_json::Value =
            serde_json::from_str(&script.to_json()).map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(json!({ "script": value, "text": text }))
    })
    .await?;
    Ok(Json(body))
}

/// The stored `script.json`, byte for byte.
async fn get_script_json(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let h = app.session(&id)?;
    let bytes = blocking(move || {
        let (script, _) = lock(&h).session.synthesize_script()?;
        Ok(script.to_json())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

/// Screenshots referenced by the session's log.
async fn get_frame(State(app): State<AppState>, Path((id, frame)): Path<(String, String)>) -> ApiResult<Response> {
    let h = app.session(&id)?;
    let frame = frame.strip_suffix(".png").unwrap_or(&frame).to_string();
    let not_found = ServiceError::NotFound(format!("frame {frame}"));
    let bytes = blocking(move || {
        let s = lock(&h);
        if !valid_name(&frame) || !s.session.source.records.iter().any(|r| r.frame == frame) {
            return Err(not_found);
        }
        let img = s.session.frames.load(&frame)?;
        Ok(encode_png(&img))
    })
    .await?;
    Ok(png(bytes))
}

/// Detector exemplars and supporter patches of the current draft, by the
/// names the text rendering uses.
async fn get_patch(State(app): State<AppState>, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let h = app.session(&id)?;
    let bytes = blocking(move || {
        let script = lock(&h).session.draft_script();
        let found = script.patch_refs().into_iter().find(|(n, _)| *n == name).map(|(_, p)| p.to_png());
        found.ok_or_else(|| ServiceError::NotFound(format!("patch {name}")))
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendRequest {
    /// `virtual:<scenario.json>`, a path on the service host.
    Spec(String),
    Inline { scenario: Box<VirtualScenario> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    /// Session whose final script runs.
    pub session: String,
    pub backend: BackendRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_polls: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_delay_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captures: Option<u32>,
}

async fn post_run(State(app): State<AppState>, Json(req): Json<RunRequest>) -> ApiResult<Json<RunReport>> {
    let h = app.session(&req.session)?;
    let guard = app.occupy_backend().ok_or(ServiceError::Busy)?;
    let max_polls = req.max_polls.unwrap_or(app.config().max_polls);
    let report = blocking(move || {
        let _guard = guard;
        let (script, _) = lock(&h).session.synthesize_script()?;
        let mut desk = match req.backend {
            BackendRequest::Spec(s) => s.parse::<BackendSpec>()?.open()?,
            BackendRequest::Inline { scenario } => VirtualDesktop::new(*scenario),
        };
        let defaults = RunConfig::default();
        let cfg = RunConfig {
            max_polls: Some(max_polls),
            post_delay_ms: req.post_delay_ms,
            captures: req.captures.unwrap_or(defaults.captures),
            ..defaults
        };
        Ok(run(&script, &mut desk, &cfg))
    })
    .await?;
    Ok(Json(report))
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

async fn serve_ui(app: &AppState, rel: &str) -> ApiResult<Response> {
    let not_found = || ServiceError::NotFound(format!("ui asset {rel}"));
    let root = app.config().ui_dir.clone().ok_or_else(not_found)?;
    let rel_path = FsPath::new(rel);
    if !rel_path.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(not_found().into());
    }
    let path = root.join(rel_path);
    let bytes = blocking(move || std::fs::read(&path).map_err(|e| ServiceError::NotFound(format!("ui asset: {e}")))).await?;
    let path = rel_path;
    Ok(([(header::CONTENT_TYPE, content_type(path))], bytes).into_response())
}

async fn get_ui_index(State(app): State<AppState>) -> ApiResult<Response> {
    serve_ui(&app, "index.html").await
}

async fn get_ui(State(app): State<AppState>, Path(path): Path<String>) -> ApiResult<Response> {
    serve_ui(&app, &path).await
}
