//! Grid execution. Every (KPI, seed) pair trains one baseline forest, and
//! all strategy, update and budget cells for that pair start from it.

use std::time::Instant;

use alforest_core::active::{run_simulated_loop, LoopConfig};
use alforest_core::{evaluate, featurize, EvalReport, IsolationForest, QueryStrategy, UpdateStrategy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::BenchConfig;
use crate::dataset::{KpiSplit, LoadedDataset};
use crate::report::{summarize, SummaryRow};
use crate::BenchError;

/// One grid cell on one KPI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub kpi: String,
    pub seed: u64,
    pub strategy: QueryStrategy,
    pub update: UpdateStrategy,
    pub budget: f64,
    pub labeled: usize,
    pub labeled_anomalies: usize,
    pub baseline_precision: f64,
    pub baseline_recall: f64,
    pub baseline_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub offset_before: f64,
    pub offset_after: f64,
    /// Wall-clock seconds for querying, updating and rescoring the test split.
    pub seconds: f64,
}

impl ResultRow {
    /// The row with its timing zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

struct Unit {
    seed: u64,
    kpi: KpiSplit,
}

/// Delay-adjusted F1 over the real (not gap-filled) points of `ts`.
fn score_test(ts: &alforest_core::TimeSeries, pred: &[u8], k: usize) -> Result<EvalReport, BenchError> {
    let labels = ts.labels().ok_or_else(|| BenchError::Dataset {
        name: ts.id().to_string(),
        reason: "test split has no labels".into(),
    })?;
    let real = ts.real_indices();
    let truth: Vec<u8> = real.iter().map(|&i| labels[i]).collect();
    let pred: Vec<u8> = real.iter().map(|&i| pred[i]).collect();
    Ok(evaluate(&truth, &pred, k).map_err(alforest_core::Error::from)?)
}

fn run_unit(config: &BenchConfig, unit: &Unit) -> Result<Vec<ResultRow>, BenchError> {
    let grid = &config.grid;
    let KpiSplit {
        dataset,
        kpi,
        train,
        test,
    } = &unit.kpi;
    let train_fm = featurize(train, &config.features);
    let test_fm = featurize(test, &config.features);
    let baseline =
        IsolationForest::train(&train_fm, &config.forest.params(unit.seed)).map_err(alforest_core::Error::from)?;
    let test_scores = baseline.score(&test_fm);
    let base = score_test(test, &baseline.classify(&test_scores), grid.k)?;

    if train.labels().is_none() && grid.budgets.iter().any(|&b| b > 0.0) {
        return Err(BenchError::Dataset {
            name: dataset.clone(),
            reason: format!("KPI `{kpi}` has no training labels for the simulated oracle"),
        });
    }

    let mut rows = Vec::new();
    for &strategy in &grid.strategies {
        for &update in &grid.updates {
            for &budget in &grid.budgets {
                let started = Instant::now();
                let (forest, labeled, anomalies) = if budget > 0.0 {
                    let loop_config = LoopConfig {
                        query: strategy,
                        update,
                        budget_fraction: budget,
                        rounds: grid.rounds,
                        learning_rate: grid.learning_rate,
                        seed: unit.seed,
                    };
                    let out = run_simulated_loop(&baseline, train, &train_fm, &loop_config)
                        .map_err(alforest_core::Error::from)?;
                    let anomalies = out.labeled.anomalous().count();
                    (out.forest, out.labeled.len(), anomalies)
                } else {
                    (baseline.clone(), 0, 0)
                };
                let after = if budget > 0.0 {
                    score_test(test, &forest.classify(&forest.score(&test_fm)), grid.k)?
                } else {
                    base.clone()
                };
                rows.push(ResultRow {
                    dataset: dataset.clone(),
                    kpi: kpi.clone(),
                    seed: unit.seed,
                    strategy,
                    update,
                    budget,
                    labeled,
                    labeled_anomalies: anomalies,
                    baseline_precision: base.precision,
                    baseline_recall: base.recall,
                    baseline_f1: base.f1,
                    precision: after.precision,
                    recall: after.recall,
                    f1: after.f1,
                    offset_before: baseline.offset,
                    offset_after: forest.offset,
                    seconds: started.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

fn canonical_order(config: &BenchConfig, rows: &mut [ResultRow]) {
    let dataset_rank = |name: &str| {
        config
            .datasets
            .iter()
            .position(|d| d.name() == name)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by(|a, b| {
        dataset_rank(&a.dataset)
            .cmp(&dataset_rank(&b.dataset))
            .then_with(|| a.kpi.cmp(&b.kpi))
            .then_with(|| a.seed.cmp(&b.seed))
            .then_with(|| a.strategy.cmp(&b.strategy))
            .then_with(|| a.update.cmp(&b.update))
            .then_with(|| a.budget.total_cmp(&b.budget))
    });
}

/// Runs the whole grid on the current rayon pool. Rows come back in a
/// fixed order regardless of scheduling.
pub fn run_experiment(config: &BenchConfig) -> Result<ExperimentResult, BenchError> {
    config.validate()?;
    let loaded = config
        .datasets
        .iter()
        .map(LoadedDataset::load)
        .collect::<Result<Vec<_>, _>>()?;
    let mut units = Vec::new();
    for dataset in &loaded {
        for &seed in &config.grid.seeds {
            for kpi in dataset.kpis(seed)? {
                units.push(Unit { seed, kpi });
            }
        }
    }
    let per_unit = units
        .par_iter()
        .map(|u| run_unit(config, u))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows: Vec<ResultRow> = per_unit.into_iter().flatten().collect();
    canonical_order(config, &mut rows);
    let summary = summarize(&rows);
    Ok(ExperimentResult { rows, summary })
}
