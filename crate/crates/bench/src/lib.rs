//! Experiment grid runner: query strategy x update strategy x budget over
//! labelled KPIs, with a simulated oracle answering from ground truth.
//!
//! Each KPI is split into a training part, which provides the query pool,
//! and a test part, on which delay-adjusted F1 is reported before and after
//! the feedback rounds.

pub mod config;
pub mod dataset;
pub mod grid;
pub mod report;

pub use config::{BenchConfig, DatasetConfig, ForestSection, GridSection};
pub use dataset::KpiSplit;
pub use grid::{run_experiment, ExperimentResult, ResultRow};
pub use report::{summarize, SummaryRow};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset `{name}`: {reason}")]
    Dataset { name: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] alforest_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
