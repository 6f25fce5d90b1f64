//! HTTP moderation service.
//!
//! Routing requests read an immutable [`CalibrationState`] snapshot behind an
//! `Arc`; policy changes build a complete new state and swap the pointer, so a
//! request sees either the old or the new (gamma, alpha) pair, never a mix.
//! Log appends and queue updates go through a single writer lock.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::conformal::{ClassCalibration, ClassMethod, RegMethod, RegOptions};
use crate::error::{Error, Result};
use crate::platform::engine::{CalibrationState, DatasetRef, LabeledItem, PolicyView};
use crate::platform::ingest::ScoreLine;
use crate::platform::persist::{load_calibration, persist_calibration};
use crate::platform::queue::{replay, DecisionLog, LogEntry, QueueStatus, ReviewQueue, ReviewQueueItem};
use crate::router::{Pipeline, RoutingDecision, RoutingPolicy, RoutingSummary};
use crate::serde_ext::extended_f64;
use crate::types::{CalibrationItem, Label, ScoredInstance};

pub const ENV_PORT: &str = "COMOD_PORT";
pub const ENV_DATA_DIR: &str = "COMOD_DATA_DIR";
pub const DEFAULT_PORT: u16 = 8080;
pub const LOG_FILE: &str = "decisions.jsonl";
pub const STATE_FILE: &str = "state.json";
const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 1000;
/// Routed instances kept for what-if previews.
const PREVIEW_WINDOW: usize = 10_000;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Holds the decision log and, unless `state_path` is set, the calibration document.
    pub data_dir: PathBuf,
    pub state_path: Option<PathBuf>,
    /// Labeled data scored by `GET /v1/metrics`.
    pub eval: Option<DatasetRef>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            ..Default::default()
        }
    }

    pub fn state_path(&self) -> PathBuf {
        self.state_path.clone().unwrap_or_else(|| self.data_dir.join(STATE_FILE))
    }

    pub fn log_path(&self) -> PathBuf {
        self.data_dir.join(LOG_FILE)
    }
}

struct Writer {
    log: DecisionLog,
    queue: ReviewQueue,
}

pub struct AppState {
    config: ServiceConfig,
    snapshot: RwLock<Option<Arc<CalibrationState>>>,
    cal_items: RwLock<Option<Arc<Vec<CalibrationItem>>>>,
    eval_items: Option<Arc<Vec<LabeledItem>>>,
    recent: Mutex<VecDeque<ScoredInstance>>,
    writer: Mutex<Writer>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Loads the calibration document if one exists, the calibration data it
    /// references, the evaluation data, and replays the decision log.
    pub fn open(config: ServiceConfig) -> Result<SharedState> {
        let state_path = config.state_path();
        let state = if state_path.exists() {
            Some(load_calibration(&state_path)?)
        } else if config.state_path.is_some() {
            return Err(Error::Config(format!("calibration state {} not found", state_path.display())));
        } else {
            None
        };
        let cal_items = match state.as_ref().and_then(|s| s.dataset.as_ref()) {
            Some(ds) => Some(Arc::new(plain(ds.load()?))),
            None => None,
        };
        let eval_items = match &config.eval {
            Some(ds) => Some(Arc::new(ds.load()?)),
            None => None,
        };
        let log_path = config.log_path();
        let queue = replay(&log_path)?;
        let log = DecisionLog::open(&log_path)?;
        Ok(Arc::new(AppState {
            config,
            snapshot: RwLock::new(state.map(Arc::new)),
            cal_items: RwLock::new(cal_items),
            eval_items,
            recent: Mutex::new(VecDeque::new()),
            writer: Mutex::new(Writer { log, queue }),
        }))
    }

    /// The current snapshot; every read in a request goes through one call.
    pub fn snapshot(&self) -> Result<Arc<CalibrationState>> {
        self.snapshot
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .ok_or_else(|| Error::Conflict("no calibration loaded; POST /v1/calibrate first".into()))
    }

    fn writer(&self) -> MutexGuard<'_, Writer> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn cal_items(&self) -> Option<Arc<Vec<CalibrationItem>>> {
        self.cal_items.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Persists then publishes `next`. Callers hold the writer lock.
    fn install(&self, w: &mut Writer, next: CalibrationState, items: Option<Arc<Vec<CalibrationItem>>>) -> Result<()> {
        persist_calibration(&next, &self.config.state_path())?;
        w.log.append(&[LogEntry::PolicyChanged {
            at: Utc::now(),
            policy: next.view(),
        }])?;
        if let Some(items) = items {
            *self.cal_items.write().unwrap_or_else(|e| e.into_inner()) = Some(items);
        }
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(next));
        Ok(())
    }

    /// Current queue contents, for tests and tooling.
    pub fn queue(&self) -> ReviewQueue {
        self.writer().queue.clone()
    }
}

fn plain(items: Vec<LabeledItem>) -> Vec<CalibrationItem> {
    items.into_iter().map(|l| l.item).collect()
}

// ---- errors ----

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Version { .. } | Error::Integrity(_) | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError {
            status,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.kind.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        kind: "SchemaError",
        message: format!("malformed request body: {e}"),
    })
}

// ---- request and response bodies ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteInstance {
    #[serde(flatten)]
    pub scores: ScoreLine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteRequest {
    pub instances: Vec<RouteInstance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteResponse {
    pub policy: PolicyView,
    pub decisions: Vec<RoutingDecision>,
    pub summary: RoutingSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrateRequest {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub class_method: Option<ClassMethod>,
    #[serde(default)]
    pub reg_method: Option<RegMethod>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    #[serde(default)]
    pub reg_options: Option<RegOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub policy: PolicyView,
    pub n_cal: usize,
    pub class: ClassCalibration,
    #[serde(with = "extended_f64")]
    pub reg_q_hat: f64,
}

impl CalibrationSummary {
    pub fn of(state: &CalibrationState) -> Self {
        CalibrationSummary {
            policy: state.view(),
            n_cal: state.class.n_cal,
            class: state.class.clone(),
            reg_q_hat: state.reg.q_hat(),
        }
    }
}

/// Partial policy update; absent fields keep their current value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PolicyUpdate {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub pipeline: Option<Pipeline>,
    pub class_method: Option<ClassMethod>,
    pub reg_method: Option<RegMethod>,
}

impl PolicyUpdate {
    fn apply(&self, mut v: PolicyView) -> PolicyView {
        v.gamma = self.gamma.unwrap_or(v.gamma);
        v.alpha = self.alpha.unwrap_or(v.alpha);
        v.pipeline = self.pipeline.unwrap_or(v.pipeline);
        v.class_method = self.class_method.unwrap_or(v.class_method);
        v.reg_method = self.reg_method.unwrap_or(v.reg_method);
        v
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct QueueQuery {
    pub status: Option<String>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueuePage {
    pub items: Vec<ReviewQueueItem>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

/// Moderator label, as `0`/`1` or `"nontoxic"`/`"toxic"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelInput {
    Bit(Label),
    Name(String),
}

impl LabelInput {
    fn label(&self) -> Result<Label> {
        match self {
            LabelInput::Bit(l) => Ok(*l),
            LabelInput::Name(s) => match s.to_ascii_lowercase().as_str() {
                "toxic" => Ok(Label::Toxic),
                "nontoxic" | "non-toxic" => Ok(Label::NonToxic),
                other => Err(Error::schema(None, format!("unknown label '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub label: LabelInput,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PreviewQuery {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreviewResponse {
    /// Which instances were re-routed: `recent` or `evaluation`.
    pub basis: String,
    pub n: usize,
    pub current_policy: PolicyView,
    pub preview_policy: PolicyView,
    pub current: RoutingSummary,
    pub preview: RoutingSummary,
}

// ---- handlers ----

async fn route_handler(State(app): State<SharedState>, body: Bytes) -> ApiResult<RouteResponse> {
    let req: RouteRequest = parse_body(&body)?;
    let mut instances = Vec::with_capacity(req.instances.len());
    let mut texts = Vec::with_capacity(req.instances.len());
    for (i, inst) in req.instances.into_iter().enumerate() {
        instances.push(inst.scores.into_scored_at(i + 1)?);
        texts.push(inst.text);
    }
    let state = app.snapshot()?;
    let (decisions, summary) = state.route(&instances)?;

    let at = Utc::now();
    let entries: Vec<LogEntry> = decisions
        .iter()
        .zip(texts)
        .map(|(d, text)| LogEntry::Routed {
            at,
            decision: d.clone(),
            text,
        })
        .collect();
    {
        let mut w = app.writer();
        w.log.append(&entries)?;
        for e in &entries {
            w.queue.apply(e)?;
        }
    }
    {
        let mut recent = app.recent.lock().unwrap_or_else(|e| e.into_inner());
        recent.extend(instances);
        let excess = recent.len().saturating_sub(PREVIEW_WINDOW);
        recent.drain(..excess);
    }
    Ok(Json(RouteResponse {
        policy: state.view(),
        decisions,
        summary,
    }))
}

async fn calibrate_handler(State(app): State<SharedState>, body: Bytes) -> ApiResult<CalibrationSummary> {
    let req: CalibrateRequest = parse_body(&body)?;
    let current = app.snapshot().ok();
    let base_policy = current.as_ref().map(|s| s.policy).unwrap_or_default();
    let policy = RoutingPolicy::new(
        req.gamma.unwrap_or(base_policy.gamma),
        req.alpha.unwrap_or(base_policy.alpha),
        req.pipeline.unwrap_or(base_policy.pipeline),
    )?;
    let class_method = req
        .class_method
        .or(current.as_ref().map(|s| s.class.method()))
        .unwrap_or(ClassMethod::Lac);
    let reg_method = req
        .reg_method
        .or(current.as_ref().map(|s| s.reg.method()))
        .unwrap_or(RegMethod::Ar);
    let opts = req
        .reg_options
        .or(current.as_ref().map(|s| s.reg_options))
        .unwrap_or_default();

    let dataset = req.dataset;
    let (next, items) = tokio::task::spawn_blocking(move || -> Result<_> {
        let items = Arc::new(plain(dataset.load()?));
        let next = CalibrationState::calibrate(&items, class_method, reg_method, policy, opts)?.with_dataset(dataset);
        Ok((next, items))
    })
    .await
    .map_err(|e| Error::Io(e.to_string()))??;

    let summary = CalibrationSummary::of(&next);
    let mut w = app.writer();
    app.install(&mut w, next, Some(items))?;
    Ok(Json(summary))
}

async fn get_policy(State(app): State<SharedState>) -> ApiResult<PolicyView> {
    Ok(Json(app.snapshot()?.view()))
}

async fn put_policy(State(app): State<SharedState>, body: Bytes) -> ApiResult<PolicyView> {
    let update: PolicyUpdate = parse_body(&body)?;
    // Holding the writer lock across read-modify-swap serializes concurrent updates.
    let mut w = app.writer();
    let current = app.snapshot()?;
    let target = update.apply(current.view());
    let items = app.cal_items();
    let next = current.updated(target, items.as_deref().map(|v| v.as_slice()))?;
    let view = next.view();
    app.install(&mut w, next, None)?;
    Ok(Json(view))
}

async fn queue_handler(State(app): State<SharedState>, Query(q): Query<QueueQuery>) -> ApiResult<QueuePage> {
    let status = q.status.as_deref().map(str::parse::<QueueStatus>).transpose()?;
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let w = app.writer();
    let total = w.queue.list(status).count();
    let items = w.queue.list(status).skip(offset).take(limit).cloned().collect();
    Ok(Json(QueuePage {
        items,
        total,
        offset,
        limit,
    }))
}

async fn decision_handler(
    State(app): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<ReviewQueueItem> {
    let req: DecisionRequest = parse_body(&body)?;
    let label = req.label.label()?;
    let mut w = app.writer();
    w.queue.check_resolvable(&id)?;
    let entry = LogEntry::Resolved {
        at: Utc::now(),
        id: id.clone(),
        label,
    };
    w.log.append(std::slice::from_ref(&entry))?;
    w.queue.apply(&entry)?;
    let item = w.queue.get(&id).cloned().ok_or(Error::NotFound(id))?;
    Ok(Json(item))
}

async fn metrics_handler(State(app): State<SharedState>) -> std::result::Result<Response, ApiError> {
    let items = app
        .eval_items
        .clone()
        .ok_or_else(|| Error::NotFound("evaluation data (start the service with an evaluation dataset)".into()))?;
    let state = app.snapshot()?;
    let report = tokio::task::spawn_blocking(move || state.evaluate(&items, None))
        .await
        .map_err(|e| Error::Io(e.to_string()))??;
    Ok(Json(report).into_response())
}

async fn preview_handler(State(app): State<SharedState>, Query(q): Query<PreviewQuery>) -> ApiResult<PreviewResponse> {
    let current = app.snapshot()?;
    let mut target = current.view();
    target.gamma = q.gamma.unwrap_or(target.gamma);
    target.alpha = q.alpha.unwrap_or(target.alpha);
    let items = app.cal_items();
    let recent: Vec<ScoredInstance> = app.recent.lock().unwrap_or_else(|e| e.into_inner()).iter().cloned().collect();
    let (basis, instances) = match (&app.eval_items, recent.is_empty()) {
        (_, false) => ("recent", recent),
        (Some(eval), true) => (
            "evaluation",
            eval.iter()
                .map(|l| ScoredInstance {
                    id: l.id.clone(),
                    probs: l.item.probs,
                    reg: l.item.reg.clone(),
                })
                .collect(),
        ),
        (None, true) => ("recent", Vec::new()),
    };
    let out = tokio::task::spawn_blocking(move || -> Result<PreviewResponse> {
        // Built on a private copy; the live snapshot is never touched.
        let candidate = current.updated(target, items.as_deref().map(|v| v.as_slice()))?;
        let (_, cur) = current.route(&instances)?;
        let (_, prev) = candidate.route(&instances)?;
        Ok(PreviewResponse {
            basis: basis.into(),
            n: instances.len(),
            current_policy: current.view(),
            preview_policy: candidate.view(),
            current: cur,
            preview: prev,
        })
    })
    .await
    .map_err(|e| Error::Io(e.to_string()))??;
    Ok(Json(out))
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/v1/route", post(route_handler))
        .route("/v1/calibrate", post(calibrate_handler))
        .route("/v1/policy", get(get_policy).put(put_policy))
        .route("/v1/queue", get(queue_handler))
        .route("/v1/queue/{id}/decision", post(decision_handler))
        .route("/v1/metrics", get(metrics_handler))
        .route("/v1/preview", get(preview_handler))
        .with_state(state)
}

/// Port from `COMOD_PORT`, else `fallback`.
pub fn port_from_env(fallback: u16) -> Result<u16> {
    match std::env::var(ENV_PORT) {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("{ENV_PORT}='{v}' is not a port number"))),
        Err(_) => Ok(fallback),
    }
}

/// Runs until ctrl-c.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<()> {
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Io(format!("cannot bind {addr}: {e}")))?;
    tracing::info!(%addr, "moderation service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
