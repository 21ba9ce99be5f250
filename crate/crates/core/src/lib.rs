//! Unsupervised anomaly detection for univariate KPIs, improved with a
//! small amount of expert feedback.
//!
//! The pipeline maps each point of a [`TimeSeries`] to six causal features,
//! scores the points with a weighted [`IsolationForest`], asks for labels on
//! a small batch chosen by a [`QueryStrategy`], and folds those labels back
//! into the forest with an [`UpdateStrategy`]. Detection quality is measured
//! with delay-adjusted F1.

pub mod active;
pub mod eval;
pub mod features;
pub mod iforest;
pub mod synth;
pub mod timeseries;

pub use active::{
    apply_update, calculate_offset, query, select_points, simulated_oracle, LabeledPoint, LabeledSet, LoopConfig,
    QueryBatch, QueryError, QueryStrategy, UpdateStrategy,
};
pub use eval::{evaluate, EvalError, EvalReport};
pub use features::{featurize, FeatureConfig, FeatureMatrix, FeatureVector};
pub use iforest::{ForestError, ForestParams, IsolationForest, ScoreVector};
pub use synth::{synth_generate, AnomalyKind, SynthError, SynthSpec};
pub use timeseries::{CsvSchema, SeriesError, TimeSeries};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Featurizes `ts` and trains a forest on every row.
pub fn train_detector(
    ts: &TimeSeries,
    features: &FeatureConfig,
    params: &ForestParams,
) -> Result<(FeatureMatrix, IsolationForest), Error> {
    let matrix = featurize(ts, features);
    let forest = IsolationForest::train(&matrix, params)?;
    Ok((matrix, forest))
}
