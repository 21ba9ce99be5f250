//! HTTP routes. Every payload is JSON; field-by-field documentation lives
//! in `API.md` next to this crate's manifest.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::session::{DatasetSpec, Histogram, PointState, RoundSummary, Session, SessionConfig, SESSION_FILE};

/// Default half-width of the chart context shipped with each query.
pub const DEFAULT_CONTEXT_SECONDS: i64 = 2 * 3600;

pub struct AppState {
    root: PathBuf,
    context_seconds: i64,
    sessions: RwLock<HashMap<String, Arc<RwLock<Session>>>>,
}

impl AppState {
    /// Opens every session directory under `root`.
    pub fn open(root: impl Into<PathBuf>, context_seconds: i64) -> Result<Arc<Self>, ApiError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            if !dir.join(SESSION_FILE).is_file() {
                continue;
            }
            let session = Session::open(&dir)?;
            sessions.insert(session.id().to_string(), Arc::new(RwLock::new(session)));
        }
        Ok(Arc::new(Self {
            root,
            context_seconds,
            sessions: RwLock::new(sessions),
        }))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session(&self, id: &str) -> Result<Arc<RwLock<Session>>, ApiError> {
        self.sessions
            .read()
            .map_err(|_| ApiError::Internal("session table lock poisoned".into()))?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::SessionNotFound(id.to_string()))
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/queries", get(get_queries))
        .route("/sessions/{id}/labels", axum::routing::post(submit_labels))
        .route("/sessions/{id}/rounds", axum::routing::post(apply_round))
        .route("/sessions/{id}/series", get(get_series))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/model", get(get_model))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

fn poisoned<T>(_: T) -> ApiError {
    ApiError::Internal("session lock poisoned".into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Letters, digits, `-` and `_`; generated when absent.
    pub id: Option<String>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Counts {
    pub unlabeled: usize,
    pub queried: usize,
    pub labeled: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub created_unix: u64,
    pub dataset: DatasetSpec,
    pub config: SessionConfig,
    pub points: usize,
    /// Points present in the data, excluding gap fill.
    pub real_points: usize,
    pub sampling_interval: i64,
    pub has_ground_truth: bool,
    pub round: usize,
    pub offset: f64,
    pub counts: Counts,
    pub batch_size: usize,
    pub labels_since_round: usize,
    pub round_ready: bool,
}

fn counts(s: &Session) -> Counts {
    Counts {
        unlabeled: s.count(PointState::Unlabeled),
        queried: s.count(PointState::Queried),
        labeled: s.count(PointState::Labeled),
    }
}

fn session_view(s: &Session) -> SessionView {
    SessionView {
        id: s.id().to_string(),
        created_unix: s.meta.created_unix,
        dataset: s.meta.dataset.clone(),
        config: s.config().clone(),
        points: s.series.len(),
        real_points: s.pool_size(),
        sampling_interval: s.series.sampling_interval(),
        has_ground_truth: s.series.labels().is_some(),
        round: s.round,
        offset: s.forest.offset,
        counts: counts(s),
        batch_size: s.batch.as_ref().map_or(0, |b| b.len()),
        labels_since_round: s.labels_since_round,
        round_ready: s.labels_since_round > 0,
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::InvalidRequest(e.body_text()))?;
    let id = req.id.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    if !valid_id(&id) {
        return Err(ApiError::InvalidRequest(format!(
            "session id `{id}` must be 1-64 of [A-Za-z0-9_-]"
        )));
    }
    if state.session(&id).is_ok() {
        return Err(ApiError::SessionExists(id));
    }
    let root = state.root.clone();
    let session = blocking(move || Session::create(&root, &id, &req.dataset, req.config)).await?;
    let view = session_view(&session);
    state
        .sessions
        .write()
        .map_err(poisoned)?
        .insert(view.id.clone(), Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Result<Json<Vec<SessionView>>, ApiError> {
    let sessions: Vec<_> = state.sessions.read().map_err(poisoned)?.values().cloned().collect();
    let mut views = sessions
        .iter()
        .map(|s| s.read().map(|s| session_view(&s)).map_err(poisoned))
        .collect::<Result<Vec<_>, _>>()?;
    views.sort_by(|a, b| a.created_unix.cmp(&b.created_unix).then_with(|| a.id.cmp(&b.id)));
    Ok(Json(views))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    let view = session_view(&*session.read().map_err(poisoned)?);
    Ok(Json(view))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Context {
    pub start_index: usize,
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueriedPoint {
    pub index: usize,
    pub timestamp: i64,
    pub value: f64,
    /// Score when the batch was selected.
    pub score: f64,
    pub state: PointState,
    pub label: Option<u8>,
    pub context: Context,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueriesView {
    pub round: usize,
    pub strategy: alforest_core::QueryStrategy,
    pub budget: usize,
    pub offset: f64,
    pub context_seconds: i64,
    pub points: Vec<QueriedPoint>,
}

async fn get_queries(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<QueriesView>, ApiError> {
    let session = state.session(&id)?;
    let half = state.context_seconds;
    blocking(move || {
        let mut s = session.write().map_err(poisoned)?;
        let batch = s.queries()?.clone();
        let ts = s.series.timestamps();
        let points = batch
            .point_indices
            .iter()
            .zip(&batch.scores)
            .map(|(&i, &score)| {
                let lo = ts.partition_point(|&t| t < ts[i] - half);
                let hi = ts.partition_point(|&t| t <= ts[i] + half);
                QueriedPoint {
                    index: i,
                    timestamp: ts[i],
                    value: s.series.values()[i],
                    score,
                    state: s.states[i],
                    label: s.label_of(i),
                    context: Context {
                        start_index: lo,
                        timestamps: ts[lo..hi].to_vec(),
                        values: s.series.values()[lo..hi].to_vec(),
                        scores: s.scores.scores[lo..hi].to_vec(),
                    },
                }
            })
            .collect();
        Ok(Json(QueriesView {
            round: s.round,
            strategy: batch.strategy,
            budget: batch.budget,
            offset: s.forest.offset,
            context_seconds: half,
            points,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct LabelItem {
    pub index: usize,
    pub label: i64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub labels: Vec<LabelItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelAck {
    pub accepted: usize,
    /// Batch points still waiting for a label.
    pub remaining: usize,
    pub labels_since_round: usize,
    pub round_ready: bool,
}

async fn submit_labels(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<LabelAck>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::InvalidRequest(e.body_text()))?;
    let session = state.session(&id)?;
    blocking(move || {
        let mut s = session.write().map_err(poisoned)?;
        let pairs: Vec<(usize, i64)> = req.labels.iter().map(|l| (l.index, l.label)).collect();
        let accepted = s.submit_labels(&pairs)?;
        Ok(Json(LabelAck {
            accepted: accepted.len(),
            remaining: s.count(PointState::Queried),
            labels_since_round: s.labels_since_round,
            round_ready: s.labels_since_round > 0,
        }))
    })
    .await
}

async fn apply_round(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<RoundSummary>, ApiError> {
    let session = state.session(&id)?;
    blocking(move || {
        let mut s = session.write().map_err(poisoned)?;
        s.apply_round().map(Json)
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct RangeParams {
    pub from: Option<i64>,
    pub to: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesView {
    pub start_index: usize,
    pub offset: f64,
    pub round: usize,
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
    /// Expert labels so far.
    pub labels: Vec<Option<u8>>,
    pub states: Vec<PointState>,
    pub synthetic: Vec<bool>,
}

async fn get_series(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    params: Result<Query<RangeParams>, QueryRejection>,
) -> Result<Json<SeriesView>, ApiError> {
    let Query(range) = params.map_err(|e| ApiError::InvalidRequest(e.body_text()))?;
    let session = state.session(&id)?;
    blocking(move || {
        let s = session.read().map_err(poisoned)?;
        let r = s.index_range(range.from, range.to)?;
        let mut labels = vec![None; r.len()];
        for e in &s.labeled.entries {
            if r.contains(&e.index) {
                labels[e.index - r.start] = Some(e.label);
            }
        }
        Ok(Json(SeriesView {
            start_index: r.start,
            offset: s.forest.offset,
            round: s.round,
            timestamps: s.series.timestamps()[r.clone()].to_vec(),
            values: s.series.values()[r.clone()].to_vec(),
            scores: s.scores.scores[r.clone()].to_vec(),
            labels,
            states: s.states[r.clone()].to_vec(),
            synthetic: s.series.synthetic()[r].to_vec(),
        }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundTruthMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsView {
    pub round: usize,
    pub offset: f64,
    pub k: usize,
    pub flagged: usize,
    pub counts: Counts,
    pub labeled_anomalies: usize,
    pub histogram: Histogram,
    pub ground_truth: Option<GroundTruthMetrics>,
    pub history: Vec<RoundSummary>,
}

async fn get_metrics(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<MetricsView>, ApiError> {
    let session = state.session(&id)?;
    blocking(move || {
        let s = session.read().map_err(poisoned)?;
        let ground_truth = s.ground_truth_report().map(|r| GroundTruthMetrics {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
        });
        Ok(Json(MetricsView {
            round: s.round,
            offset: s.forest.offset,
            k: s.config().k,
            flagged: s.forest.classify(&s.scores).iter().filter(|&&p| p == 1).count(),
            counts: counts(&s),
            labeled_anomalies: s.labeled.anomalous().count(),
            histogram: Histogram::of(&s.scores),
            ground_truth,
            history: s.history.clone(),
        }))
    })
    .await
}

/// The current model file, byte for byte as persisted.
async fn get_model(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<impl IntoResponse, ApiError> {
    let session = state.session(&id)?;
    let text = blocking(move || {
        let s = session.read().map_err(poisoned)?;
        s.forest.to_model_json().map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text))
}
