//! Labelling sessions: per-point pool state, query batches, update rounds
//! and their on-disk form.
//!
//! A session directory holds
//!
//! * `session.json`: id, dataset reference and configuration,
//! * `dataset.csv`: the series as ingested,
//! * `model_round_N.json`: the forest after round `N` (0 is the
//!   unsupervised baseline),
//! * `labels.log`: one JSON event per line (`query`, `label`, `round`).
//!
//! A round's snapshot is written before its `round` event is appended, so
//! the log alone decides which snapshot is current. Reopening a session
//! replays the log on top of the baseline.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use alforest_core::active::{apply_update, budget_from_fraction, query, LabeledPoint, LabeledSet};
use alforest_core::timeseries::{load_csv, load_multi_csv, CsvSchema};
use alforest_core::{
    evaluate, featurize, synth_generate, EvalReport, FeatureConfig, FeatureMatrix, ForestParams, IsolationForest,
    QueryBatch, QueryStrategy, ScoreVector, SynthSpec, TimeSeries, UpdateStrategy,
};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const SESSION_FILE: &str = "session.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const LOG_FILE: &str = "labels.log";
const SESSION_FORMAT_VERSION: u32 = 1;
const HISTOGRAM_BINS: usize = 10;

pub fn model_file(round: usize) -> String {
    format!("model_round_{round}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub subsample: Option<usize>,
    pub contamination: f64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: None,
            contamination: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub query: QueryStrategy,
    pub update: UpdateStrategy,
    /// Points per batch as a fraction of the pool.
    pub budget_fraction: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub forest: ForestOptions,
    pub features: FeatureConfig,
    /// Delay for the F1 reported when ground truth exists.
    pub k: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            query: QueryStrategy::TopAnomalies,
            update: UpdateStrategy::Offset,
            budget_fraction: 0.01,
            learning_rate: 1.0,
            seed: 0,
            forest: ForestOptions::default(),
            features: FeatureConfig::default(),
            k: alforest_core::eval::DEFAULT_DELAY,
        }
    }
}

impl SessionConfig {
    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.forest.n_trees,
            subsample_size: self.forest.subsample,
            contamination: self.forest.contamination,
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<(), ApiError> {
        let bad = |m: String| Err(ApiError::InvalidRequest(m));
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return bad(format!("budget_fraction {} outside [0, 1]", self.budget_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        Ok(())
    }
}

/// Where a session's series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A CSV file readable by the service; `kpi` selects one series of a
    /// multi-KPI file.
    Csv { path: PathBuf, kpi: Option<String> },
    Synthetic {
        #[serde(default)]
        spec: SynthSpec,
    },
    /// Values posted with the request. Not repeated in `session.json`.
    Inline {
        id: Option<String>,
        #[serde(default)]
        timestamps: Vec<i64>,
        #[serde(default)]
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
    },
}

impl DatasetSpec {
    fn load(&self) -> Result<TimeSeries, ApiError> {
        let err = |e: String| ApiError::Dataset(e);
        match self {
            DatasetSpec::Csv { path, kpi: None } => {
                load_csv(path, &CsvSchema::default()).map_err(|e| err(e.to_string()))
            }
            DatasetSpec::Csv { path, kpi: Some(kpi) } => load_multi_csv(path, &CsvSchema::default())
                .map_err(|e| err(e.to_string()))?
                .into_iter()
                .find(|ts| ts.id() == kpi)
                .ok_or_else(|| err(format!("KPI `{kpi}` not found in {}", path.display()))),
            DatasetSpec::Synthetic { spec } => synth_generate(spec).map_err(|e| err(e.to_string())),
            DatasetSpec::Inline {
                id,
                timestamps,
                values,
                labels,
            } => TimeSeries::new(
                id.clone().unwrap_or_else(|| "inline".into()),
                timestamps.clone(),
                values.clone(),
                labels.clone(),
            )
            .map_err(|e| err(e.to_string())),
        }
    }

    /// The reference kept on disk; inline data lives in `dataset.csv`.
    fn reference(&self) -> DatasetSpec {
        match self {
            DatasetSpec::Inline { id, .. } => DatasetSpec::Inline {
                id: id.clone(),
                timestamps: Vec::new(),
                values: Vec::new(),
                labels: None,
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub format_version: u32,
    pub id: String,
    pub created_unix: u64,
    pub dataset: DatasetSpec,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointState {
    Unlabeled,
    Queried,
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub index: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Query {
        round: usize,
        indices: Vec<usize>,
        scores: Vec<f64>,
    },
    Label {
        labels: Vec<LabelEntry>,
    },
    Round {
        round: usize,
        model: String,
        offset_before: f64,
        offset_after: f64,
        labels: usize,
        warning: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(scores: &ScoreVector) -> Self {
        let edges = (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect();
        let mut counts = vec![0; HISTOGRAM_BINS];
        for &s in &scores.scores {
            let bin = ((s * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub offset_before: f64,
    pub offset_after: f64,
    /// Labelled points the update used (cumulative).
    pub labels_used: usize,
    pub warning: Option<String>,
    pub flagged_before: usize,
    pub flagged_after: usize,
    pub histogram_before: Histogram,
    pub histogram_after: Histogram,
    pub f1_before: Option<f64>,
    pub f1_after: Option<f64>,
}

pub struct Session {
    pub meta: SessionMeta,
    pub dir: PathBuf,
    /// Gap-filled series; gap points are never offered for labelling.
    pub series: TimeSeries,
    pub features: FeatureMatrix,
    pub forest: IsolationForest,
    pub scores: ScoreVector,
    /// Completed update rounds.
    pub round: usize,
    pub states: Vec<PointState>,
    pub labeled: LabeledSet,
    /// The outstanding batch, kept until the next round.
    pub batch: Option<QueryBatch>,
    pub labels_since_round: usize,
    pub history: Vec<RoundSummary>,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes via a temporary file and rename so readers never see a partial
/// file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

impl Session {
    /// Trains the baseline forest and lays out a fresh session directory
    /// under `root`.
    pub fn create(root: &Path, id: &str, dataset: &DatasetSpec, config: SessionConfig) -> Result<Self, ApiError> {
        config.validate()?;
        let raw = dataset.load()?;
        let dir = root.join(id);
        let meta = SessionMeta {
            format_version: SESSION_FORMAT_VERSION,
            id: id.to_string(),
            created_unix: now_unix(),
            dataset: dataset.reference(),
            config,
        };
        let session = Self::build(meta, dir.clone(), &raw, None)?;
        fs::create_dir_all(root)?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(ApiError::SessionExists(id.into())),
            Err(e) => return Err(e.into()),
        }
        let mut csv = Vec::new();
        raw.write_csv(&mut csv).map_err(internal)?;
        write_atomic(&dir.join(DATASET_FILE), &csv)?;
        write_atomic(
            &dir.join(model_file(0)),
            session.forest.to_model_json().map_err(internal)?.as_bytes(),
        )?;
        File::create(dir.join(LOG_FILE))?;
        // written last: a directory without it is an aborted create
        let meta_json = serde_json::to_vec_pretty(&session.meta).map_err(internal)?;
        write_atomic(&dir.join(SESSION_FILE), &meta_json)?;
        Ok(session)
    }

    /// Featurizes `raw` and trains the baseline unless one is supplied.
    fn build(
        meta: SessionMeta,
        dir: PathBuf,
        raw: &TimeSeries,
        forest: Option<IsolationForest>,
    ) -> Result<Self, ApiError> {
        let series = raw.fill_gaps();
        let features = featurize(&series, &meta.config.features);
        let forest = match forest {
            Some(f) => f,
            None => IsolationForest::train(&features, &meta.config.forest_params())
                .map_err(|e| ApiError::InvalidRequest(e.to_string()))?,
        };
        let scores = forest.score(&features);
        let n = series.len();
        Ok(Self {
            meta,
            dir,
            series,
            features,
            forest,
            scores,
            round: 0,
            states: vec![PointState::Unlabeled; n],
            labeled: LabeledSet::new(),
            batch: None,
            labels_since_round: 0,
            history: Vec::new(),
        })
    }

    /// Reloads a session directory, replaying its label log.
    pub fn open(dir: &Path) -> Result<Self, ApiError> {
        let meta: SessionMeta =
            serde_json::from_slice(&fs::read(dir.join(SESSION_FILE))?).map_err(|e| ApiError::Storage(e.to_string()))?;
        if meta.format_version != SESSION_FORMAT_VERSION {
            return Err(ApiError::Storage(format!(
                "unsupported session format {}",
                meta.format_version
            )));
        }
        let raw =
            load_csv(dir.join(DATASET_FILE), &CsvSchema::default()).map_err(|e| ApiError::Storage(e.to_string()))?;
        let baseline = IsolationForest::load(dir.join(model_file(0))).map_err(|e| ApiError::Storage(e.to_string()))?;
        let mut session = Self::build(meta, dir.to_path_buf(), &raw, Some(baseline))?;

        let file = File::open(dir.join(LOG_FILE))?;
        let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogEvent>(line) {
                Ok(event) => session.replay(event)?,
                // a torn final line is a write that never completed
                Err(_) if i + 1 == lines.len() => break,
                Err(e) => return Err(ApiError::Storage(format!("{LOG_FILE} line {}: {e}", i + 1))),
            }
        }
        Ok(session)
    }

    fn load_model(&self, round: usize) -> Result<IsolationForest, ApiError> {
        IsolationForest::load(self.dir.join(model_file(round))).map_err(|e| ApiError::Storage(e.to_string()))
    }

    fn set_forest(&mut self, forest: IsolationForest) {
        self.scores = forest.score(&self.features);
        self.forest = forest;
    }

    fn replay(&mut self, event: LogEvent) -> Result<(), ApiError> {
        match event {
            LogEvent::Query { round, indices, scores } => {
                if round != self.round || indices.iter().any(|&i| i >= self.states.len()) {
                    return Err(ApiError::Storage(format!(
                        "query event for round {round} does not fit the log"
                    )));
                }
                self.record_batch(QueryBatch {
                    budget: indices.len(),
                    point_indices: indices,
                    scores,
                    strategy: self.meta.config.query,
                });
            }
            LogEvent::Label { labels } => {
                if labels.iter().any(|l| l.index >= self.states.len() || l.label > 1) {
                    return Err(ApiError::Storage("label event does not fit the series".into()));
                }
                self.record_labels(&labels);
            }
            LogEvent::Round {
                round,
                offset_before,
                warning,
                ..
            } => {
                let before = self.snapshot_stats();
                let forest = self.load_model(round)?;
                self.finish_round(forest, before, offset_before, warning);
            }
        }
        Ok(())
    }

    fn append(&self, event: &LogEvent) -> Result<(), ApiError> {
        let mut line = serde_json::to_string(event).map_err(internal)?;
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(self.dir.join(LOG_FILE))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.meta.config
    }

    pub fn pool_size(&self) -> usize {
        self.series.real_indices().len()
    }

    pub fn count(&self, state: PointState) -> usize {
        self.states.iter().filter(|&&s| s == state).count()
    }

    /// Expert label of point `i`, if given.
    pub fn label_of(&self, i: usize) -> Option<u8> {
        self.labeled.entries.iter().find(|e| e.index == i).map(|e| e.label)
    }

    fn record_batch(&mut self, batch: QueryBatch) {
        for &i in &batch.point_indices {
            self.states[i] = PointState::Queried;
        }
        self.batch = Some(batch);
    }

    fn record_labels(&mut self, labels: &[LabelEntry]) {
        for l in labels {
            let score = self
                .batch
                .as_ref()
                .and_then(|b| b.point_indices.iter().position(|&i| i == l.index).map(|k| b.scores[k]))
                .unwrap_or(self.scores[l.index]);
            self.labeled.push(LabeledPoint {
                index: l.index,
                label: l.label,
                score,
            });
            self.states[l.index] = PointState::Labeled;
        }
        self.labels_since_round += labels.len();
    }

    /// The outstanding batch, or a new one from the unlabelled pool. The
    /// selection matches the library's simulated round for the same
    /// forest, labelled set, seed and round.
    pub fn queries(&mut self) -> Result<&QueryBatch, ApiError> {
        if self.batch.is_none() {
            let candidates: Vec<usize> = (0..self.series.len())
                .filter(|&i| !self.series.is_synthetic(i) && self.states[i] == PointState::Unlabeled)
                .collect();
            let config = &self.meta.config;
            let budget = budget_from_fraction(config.budget_fraction, self.pool_size()).min(candidates.len());
            let batch = query(
                config.query,
                &self.scores,
                self.forest.offset,
                &candidates,
                budget,
                config.seed.wrapping_add(self.round as u64),
            )
            .map_err(internal)?;
            if !batch.is_empty() {
                self.append(&LogEvent::Query {
                    round: self.round,
                    indices: batch.point_indices.clone(),
                    scores: batch.scores.clone(),
                })?;
            }
            self.record_batch(batch);
        }
        Ok(self.batch.as_ref().expect("batch set above"))
    }

    /// Validates the whole submission before accepting any of it.
    pub fn submit_labels(&mut self, labels: &[(usize, i64)]) -> Result<Vec<LabelEntry>, ApiError> {
        if labels.is_empty() {
            return Err(ApiError::InvalidRequest("no labels in request".into()));
        }
        let mut accepted: Vec<LabelEntry> = Vec::with_capacity(labels.len());
        for &(index, label) in labels {
            if index >= self.states.len() {
                return Err(ApiError::UnknownPoint(index));
            }
            let label = match label {
                0 | 1 => label as u8,
                other => return Err(ApiError::InvalidLabel(other)),
            };
            match self.states[index] {
                PointState::Queried if !accepted.iter().any(|e| e.index == index) => {}
                PointState::Queried | PointState::Labeled => {
                    return Err(ApiError::NotQueried {
                        index,
                        reason: "already labelled",
                    })
                }
                PointState::Unlabeled => {
                    return Err(ApiError::NotQueried {
                        index,
                        reason: "not in the current batch",
                    })
                }
            }
            accepted.push(LabelEntry { index, label });
        }
        self.append(&LogEvent::Label {
            labels: accepted.clone(),
        })?;
        self.record_labels(&accepted);
        Ok(accepted)
    }

    fn snapshot_stats(&self) -> (usize, Histogram, Option<f64>) {
        let flagged = self.forest.classify(&self.scores).iter().filter(|&&p| p == 1).count();
        let f1 = self.ground_truth_report().map(|r| r.f1);
        (flagged, Histogram::of(&self.scores), f1)
    }

    fn finish_round(
        &mut self,
        forest: IsolationForest,
        before: (usize, Histogram, Option<f64>),
        offset_before: f64,
        warning: Option<String>,
    ) -> RoundSummary {
        self.set_forest(forest);
        self.round += 1;
        // unanswered queries go back to the pool
        for s in self.states.iter_mut() {
            if *s == PointState::Queried {
                *s = PointState::Unlabeled;
            }
        }
        self.batch = None;
        self.labels_since_round = 0;
        let (flagged_after, histogram_after, f1_after) = self.snapshot_stats();
        let summary = RoundSummary {
            round: self.round,
            offset_before,
            offset_after: self.forest.offset,
            labels_used: self.labeled.len(),
            warning,
            flagged_before: before.0,
            flagged_after,
            histogram_before: before.1,
            histogram_after,
            f1_before: before.2,
            f1_after,
        };
        self.history.push(summary.clone());
        summary
    }

    /// Applies the configured update with every label collected so far and
    /// persists the resulting snapshot.
    pub fn apply_round(&mut self) -> Result<RoundSummary, ApiError> {
        if self.labels_since_round == 0 {
            return Err(ApiError::NoLabels);
        }
        let config = &self.meta.config;
        let outcome = apply_update(
            &self.forest,
            &self.labeled,
            &self.features,
            config.update,
            config.learning_rate,
        );
        let warning = outcome
            .offset_error
            .map(|e| format!("{e}; offset kept at {}", self.forest.offset));
        let next = self.round + 1;
        let model = model_file(next);
        write_atomic(
            &self.dir.join(&model),
            outcome.forest.to_model_json().map_err(internal)?.as_bytes(),
        )?;
        let offset_before = self.forest.offset;
        self.append(&LogEvent::Round {
            round: next,
            model,
            offset_before,
            offset_after: outcome.forest.offset,
            labels: self.labeled.len(),
            warning: warning.clone(),
        })?;
        let before = self.snapshot_stats();
        Ok(self.finish_round(outcome.forest, before, offset_before, warning))
    }

    /// Delay-adjusted quality of the current classification over real
    /// points, when the dataset carries ground truth.
    pub fn ground_truth_report(&self) -> Option<EvalReport> {
        let truth = self.series.labels()?;
        let real = self.series.real_indices();
        let pred = self.forest.classify(&self.scores);
        let t: Vec<u8> = real.iter().map(|&i| truth[i]).collect();
        let p: Vec<u8> = real.iter().map(|&i| pred[i]).collect();
        evaluate(&t, &p, self.meta.config.k).ok()
    }

    /// Indices whose timestamps fall in `[from, to]`.
    pub fn index_range(&self, from: Option<i64>, to: Option<i64>) -> Result<std::ops::Range<usize>, ApiError> {
        let ts = self.series.timestamps();
        let first = ts[0];
        let last = ts[ts.len() - 1];
        let from = from.unwrap_or(first);
        let to = to.unwrap_or(last);
        if from > to {
            return Err(ApiError::Range(format!("from {from} is after to {to}")));
        }
        if to < first || from > last {
            return Err(ApiError::Range(format!(
                "[{from}, {to}] is outside the series span [{first}, {last}]"
            )));
        }
        let lo = ts.partition_point(|&t| t < from);
        let hi = ts.partition_point(|&t| t <= to);
        Ok(lo..hi)
    }
}
