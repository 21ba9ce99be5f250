//! Pool-based active learning on top of [`IsolationForest`].
//!
//! A round picks a batch of pool points through an interest function,
//! obtains labels for them (from a person or from ground truth), and then
//! updates the forest by reweighting its trees, by moving its offset
//! between the labelled classes, or both.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::iforest::{IsolationForest, ScoreVector};
use crate::timeseries::TimeSeries;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("budget {budget} exceeds pool of {pool} points")]
    BudgetExceedsPool { budget: usize, pool: usize },
    #[error("labelled set has no {0} points")]
    MissingClass(Class),
    #[error("series carries no ground-truth labels")]
    NoGroundTruth,
    #[error("point {0} is outside the series")]
    OutOfRange(usize),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Anomalous,
    Normal,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Anomalous => "anomalous",
            Class::Normal => "normal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryStrategy {
    /// Highest anomaly scores first.
    #[serde(rename = "TA")]
    TopAnomalies,
    /// Scores closest to the decision offset first.
    #[serde(rename = "CTDB")]
    CloseToBoundary,
    /// Half the budget (rounded up) by TA, the rest by CTDB.
    #[serde(rename = "TA+CTDB")]
    Combined,
    #[serde(rename = "Random")]
    Random,
}

impl QueryStrategy {
    pub const ALL: [QueryStrategy; 4] = [
        QueryStrategy::TopAnomalies,
        QueryStrategy::CloseToBoundary,
        QueryStrategy::Combined,
        QueryStrategy::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            QueryStrategy::TopAnomalies => "TA",
            QueryStrategy::CloseToBoundary => "CTDB",
            QueryStrategy::Combined => "TA+CTDB",
            QueryStrategy::Random => "Random",
        }
    }
}

impl fmt::Display for QueryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryStrategy {
    type Err = QueryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TA" => Ok(QueryStrategy::TopAnomalies),
            "CTDB" => Ok(QueryStrategy::CloseToBoundary),
            "TA+CTDB" => Ok(QueryStrategy::Combined),
            "RANDOM" => Ok(QueryStrategy::Random),
            _ => Err(QueryError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UpdateStrategy {
    #[serde(rename = "TW")]
    TreeWeights,
    #[serde(rename = "O")]
    Offset,
    #[serde(rename = "TW+O")]
    TreeWeightsThenOffset,
}

impl UpdateStrategy {
    pub const ALL: [UpdateStrategy; 3] = [
        UpdateStrategy::TreeWeights,
        UpdateStrategy::Offset,
        UpdateStrategy::TreeWeightsThenOffset,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateStrategy::TreeWeights => "TW",
            UpdateStrategy::Offset => "O",
            UpdateStrategy::TreeWeightsThenOffset => "TW+O",
        }
    }

    fn reweights(&self) -> bool {
        matches!(
            self,
            UpdateStrategy::TreeWeights | UpdateStrategy::TreeWeightsThenOffset
        )
    }

    fn moves_offset(&self) -> bool {
        matches!(self, UpdateStrategy::Offset | UpdateStrategy::TreeWeightsThenOffset)
    }
}

impl fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateStrategy {
    type Err = QueryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TW" => Ok(UpdateStrategy::TreeWeights),
            "O" => Ok(UpdateStrategy::Offset),
            "TW+O" => Ok(UpdateStrategy::TreeWeightsThenOffset),
            _ => Err(QueryError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Points selected for labelling, with their scores at selection time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub point_indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub strategy: QueryStrategy,
    pub budget: usize,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub index: usize,
    pub label: u8,
    /// Anomaly score when the point was queried.
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub entries: Vec<LabeledPoint>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.entries.iter().any(|e| e.index == index)
    }

    /// Adds a point; an already labelled index is left untouched.
    pub fn push(&mut self, point: LabeledPoint) -> bool {
        if self.contains(point.index) {
            return false;
        }
        self.entries.push(point);
        true
    }

    pub fn extend(&mut self, other: &LabeledSet) {
        for e in &other.entries {
            self.push(*e);
        }
    }

    pub fn anomalous(&self) -> impl Iterator<Item = &LabeledPoint> {
        self.entries.iter().filter(|e| e.label == 1)
    }

    pub fn normal(&self) -> impl Iterator<Item = &LabeledPoint> {
        self.entries.iter().filter(|e| e.label == 0)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// Same points with scores replaced by `forest`'s current scores.
    pub fn rescored(&self, forest: &IsolationForest, features: &FeatureMatrix) -> LabeledSet {
        LabeledSet {
            entries: self
                .entries
                .iter()
                .map(|e| LabeledPoint {
                    score: forest.score_row(features.row(e.index)),
                    ..*e
                })
                .collect(),
        }
    }
}

/// Budget in points for a fraction of a pool, rounded up.
pub fn budget_from_fraction(fraction: f64, pool_size: usize) -> usize {
    if !(fraction > 0.0) {
        return 0;
    }
    // tolerate representation error in fractions like 0.01
    let raw = (fraction * pool_size as f64 - 1e-9).ceil();
    (raw.max(0.0) as usize).min(pool_size)
}

/// Interest of the top-anomaly strategy: the score itself.
pub fn interest_ta(scores: &ScoreVector) -> impl Fn(usize) -> f64 + '_ {
    move |i| scores[i]
}

/// Interest of the close-to-boundary strategy: `-(score - offset)^2`.
pub fn interest_ctdb(scores: &ScoreVector, offset: f64) -> impl Fn(usize) -> f64 + '_ {
    move |i| {
        let d = scores[i] - offset;
        -(d * d)
    }
}

/// The `budget` candidates with the largest interest, in selection order.
/// Equal interests go to the lower index.
pub fn select_points<F>(candidates: &[usize], budget: usize, interest: F) -> Result<Vec<usize>, QueryError>
where
    F: Fn(usize) -> f64,
{
    if budget > candidates.len() {
        return Err(QueryError::BudgetExceedsPool {
            budget,
            pool: candidates.len(),
        });
    }
    // + 0.0 folds -0.0 into 0.0 so total_cmp sees them as equal
    let mut ranked: Vec<(f64, usize)> = candidates.iter().map(|&i| (interest(i) + 0.0, i)).collect();
    let by_interest = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)) };
    if budget < ranked.len() && budget > 0 {
        ranked.select_nth_unstable_by(budget - 1, by_interest);
        ranked.truncate(budget);
    } else if budget == 0 {
        ranked.clear();
    }
    ranked.sort_by(by_interest);
    Ok(ranked.into_iter().map(|(_, i)| i).collect())
}

/// Top-anomaly points for the first half of the budget (rounded up), then
/// boundary points from what is left.
pub fn select_combined(
    scores: &ScoreVector,
    offset: f64,
    candidates: &[usize],
    budget: usize,
) -> Result<Vec<usize>, QueryError> {
    if budget > candidates.len() {
        return Err(QueryError::BudgetExceedsPool {
            budget,
            pool: candidates.len(),
        });
    }
    let top_count = budget.div_ceil(2);
    let mut picked = select_points(candidates, top_count, interest_ta(scores))?;
    let taken: HashSet<usize> = picked.iter().copied().collect();
    let rest: Vec<usize> = candidates.iter().copied().filter(|i| !taken.contains(i)).collect();
    picked.extend(select_points(&rest, budget / 2, interest_ctdb(scores, offset))?);
    Ok(picked)
}

/// Uniform sample without replacement, reproducible for a given seed.
pub fn select_random(candidates: &[usize], budget: usize, seed: u64) -> Result<Vec<usize>, QueryError> {
    if budget > candidates.len() {
        return Err(QueryError::BudgetExceedsPool {
            budget,
            pool: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, candidates.len(), budget)
        .into_iter()
        .map(|k| candidates[k])
        .collect())
}

/// Runs `strategy` over `candidates` and packages the batch.
pub fn query(
    strategy: QueryStrategy,
    scores: &ScoreVector,
    offset: f64,
    candidates: &[usize],
    budget: usize,
    seed: u64,
) -> Result<QueryBatch, QueryError> {
    let point_indices = match strategy {
        QueryStrategy::TopAnomalies => select_points(candidates, budget, interest_ta(scores))?,
        QueryStrategy::CloseToBoundary => select_points(candidates, budget, interest_ctdb(scores, offset))?,
        QueryStrategy::Combined => select_combined(scores, offset, candidates, budget)?,
        QueryStrategy::Random => select_random(candidates, budget, seed)?,
    };
    let batch_scores = point_indices.iter().map(|&i| scores[i]).collect();
    Ok(QueryBatch {
        point_indices,
        scores: batch_scores,
        strategy,
        budget,
    })
}

/// Midpoint between the lowest-scored labelled anomaly and the
/// highest-scored labelled normal point.
pub fn calculate_offset(labeled: &LabeledSet) -> Result<f64, QueryError> {
    let min_anomalous = labeled
        .anomalous()
        .map(|e| e.score)
        .min_by(f64::total_cmp)
        .ok_or(QueryError::MissingClass(Class::Anomalous))?;
    let max_normal = labeled
        .normal()
        .map(|e| e.score)
        .max_by(f64::total_cmp)
        .ok_or(QueryError::MissingClass(Class::Normal))?;
    Ok((min_anomalous + max_normal) / 2.0)
}

/// Labels copied from ground truth.
pub fn simulated_oracle(ts: &TimeSeries, batch: &QueryBatch) -> Result<LabeledSet, QueryError> {
    let labels = ts.labels().ok_or(QueryError::NoGroundTruth)?;
    let mut out = LabeledSet::new();
    for (&index, &score) in batch.point_indices.iter().zip(&batch.scores) {
        let label = *labels.get(index).ok_or(QueryError::OutOfRange(index))?;
        out.push(LabeledPoint { index, label, score });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub forest: IsolationForest,
    /// Set when the offset step could not run; the previous offset is kept.
    pub offset_error: Option<QueryError>,
}

/// Applies `strategy` using every point in `labeled`. `features` must be
/// the matrix the labelled indices refer to.
///
/// For the combined strategy the offset is placed using scores from the
/// reweighted forest.
pub fn apply_update(
    forest: &IsolationForest,
    labeled: &LabeledSet,
    features: &FeatureMatrix,
    strategy: UpdateStrategy,
    learning_rate: f64,
) -> UpdateOutcome {
    let mut updated = forest.clone();
    if strategy.reweights() {
        let anomalies: Vec<_> = labeled.anomalous().map(|e| *features.row(e.index)).collect();
        updated = updated.update_tree_weights(&anomalies, learning_rate);
    }
    let mut offset_error = None;
    if strategy.moves_offset() {
        match calculate_offset(&labeled.rescored(&updated, features)) {
            Ok(offset) => updated.offset = offset,
            Err(e) => offset_error = Some(e),
        }
    }
    UpdateOutcome {
        forest: updated,
        offset_error,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub query: QueryStrategy,
    pub update: UpdateStrategy,
    /// Per-round budget as a fraction of the pool.
    pub budget_fraction: f64,
    pub rounds: usize,
    /// Blend factor for tree-weight updates; 1 replaces the weights.
    pub learning_rate: f64,
    /// Seed for the random strategy.
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            query: QueryStrategy::TopAnomalies,
            update: UpdateStrategy::Offset,
            budget_fraction: 0.01,
            rounds: 1,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub batch: QueryBatch,
    pub offset_before: f64,
    pub offset_after: f64,
    pub offset_error: Option<QueryError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub forest: IsolationForest,
    pub labeled: LabeledSet,
    pub rounds: Vec<RoundRecord>,
}

/// Query pool: real (not gap-filled) points not yet labelled.
pub fn candidate_pool(ts: &TimeSeries, labeled: &LabeledSet) -> Vec<usize> {
    let taken: HashSet<usize> = labeled.indices().into_iter().collect();
    (0..ts.len())
        .filter(|&i| !ts.is_synthetic(i) && !taken.contains(&i))
        .collect()
}

/// Queries one batch from the remaining pool and labels it from ground
/// truth. The caller applies the update.
pub fn simulated_round(
    forest: &IsolationForest,
    ts: &TimeSeries,
    features: &FeatureMatrix,
    labeled: &mut LabeledSet,
    config: &LoopConfig,
    round: usize,
) -> Result<RoundRecord, QueryError> {
    let pool_size = ts.real_indices().len();
    let candidates = candidate_pool(ts, labeled);
    let budget = budget_from_fraction(config.budget_fraction, pool_size).min(candidates.len());
    let scores = forest.score(features);
    let batch = query(
        config.query,
        &scores,
        forest.offset,
        &candidates,
        budget,
        config.seed.wrapping_add(round as u64),
    )?;
    let answers = simulated_oracle(ts, &batch)?;
    labeled.extend(&answers);
    Ok(RoundRecord {
        batch,
        offset_before: forest.offset,
        offset_after: forest.offset,
        offset_error: None,
    })
}

/// Runs `config.rounds` rounds against the series' own labels.
pub fn run_simulated_loop(
    forest: &IsolationForest,
    ts: &TimeSeries,
    features: &FeatureMatrix,
    config: &LoopConfig,
) -> Result<LoopOutcome, QueryError> {
    if ts.labels().is_none() {
        return Err(QueryError::NoGroundTruth);
    }
    let mut current = forest.clone();
    let mut labeled = LabeledSet::new();
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let mut record = simulated_round(&current, ts, features, &mut labeled, config, round)?;
        if record.batch.is_empty() {
            rounds.push(record);
            break;
        }
        let outcome = apply_update(&current, &labeled, features, config.update, config.learning_rate);
        current = outcome.forest;
        record.offset_after = current.offset;
        record.offset_error = outcome.offset_error;
        rounds.push(record);
    }
    Ok(LoopOutcome {
        forest: current,
        labeled,
        rounds,
    })
}
