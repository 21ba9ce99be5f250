//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [forest]
//! n_trees = 100
//! contamination = 0.03
//!
//! [grid]
//! strategies = ["TA", "CTDB", "TA+CTDB", "Random"]
//! updates = ["TW", "O", "TW+O"]
//! budgets = [0.0, 0.01, 0.05]
//! seeds = [0, 1, 2, 3, 4]
//!
//! [[dataset]]
//! kind = "synthetic"
//! name = "sine"
//! [dataset.spec]
//! n = 10000
//! anomaly_rate = 0.01
//!
//! [[dataset]]
//! kind = "aiops"
//! train = "phase2_train.csv"
//! test = "phase2_ground_truth.csv"
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};

use alforest_core::{FeatureConfig, ForestParams, QueryStrategy, SynthSpec, UpdateStrategy};
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(rename = "dataset", default)]
    pub datasets: Vec<DatasetConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    /// Omit for `min(256, n)`.
    pub subsample: Option<usize>,
    pub contamination: f64,
}

impl Default for ForestSection {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: None,
            contamination: 0.03,
        }
    }
}

impl ForestSection {
    pub fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            subsample_size: self.subsample,
            contamination: self.contamination,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub strategies: Vec<QueryStrategy>,
    pub updates: Vec<UpdateStrategy>,
    /// Fractions of the training pool; 0 reproduces the baseline.
    pub budgets: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Feedback rounds per cell.
    pub rounds: usize,
    pub learning_rate: f64,
    /// Detection delay for the adjusted F1.
    pub k: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            strategies: QueryStrategy::ALL.to_vec(),
            updates: UpdateStrategy::ALL.to_vec(),
            budgets: vec![0.0, 0.01, 0.05, 0.25, 0.5],
            seeds: vec![0],
            rounds: 1,
            learning_rate: 1.0,
            k: alforest_core::eval::DEFAULT_DELAY,
        }
    }
}

fn default_train_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated series; the grid seed replaces `spec.seed`.
    Synthetic {
        name: Option<String>,
        #[serde(default)]
        spec: SynthSpec,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    /// One KPI per file. Without `test` the train file is split.
    Csv {
        name: Option<String>,
        train: PathBuf,
        test: Option<PathBuf>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    /// Competition layout: many KPIs per file, keyed by `KPI ID`.
    Aiops {
        name: Option<String>,
        train: PathBuf,
        test: Option<PathBuf>,
        /// Restrict to these KPI ids.
        kpis: Option<Vec<String>>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match self {
            DatasetConfig::Synthetic { name, .. } => name.clone().unwrap_or_else(|| "synthetic".into()),
            DatasetConfig::Csv { name, train, .. } | DatasetConfig::Aiops { name, train, .. } => {
                name.clone().unwrap_or_else(|| {
                    train
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                })
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Synthetic { .. } => {}
            DatasetConfig::Csv { train, test, .. } | DatasetConfig::Aiops { train, test, .. } => {
                fix(train);
                if let Some(t) = test {
                    fix(t);
                }
            }
        }
    }

    fn train_fraction(&self) -> f64 {
        match self {
            DatasetConfig::Synthetic { train_fraction, .. }
            | DatasetConfig::Csv { train_fraction, .. }
            | DatasetConfig::Aiops { train_fraction, .. } => *train_fraction,
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let config: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.datasets.iter_mut().for_each(|d| d.resolve(base));
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.datasets.is_empty() {
            return bad("at least one [[dataset]] is required".into());
        }
        let g = &self.grid;
        if g.strategies.is_empty() || g.updates.is_empty() || g.budgets.is_empty() || g.seeds.is_empty() {
            return bad("strategies, updates, budgets and seeds must be non-empty".into());
        }
        if let Some(b) = g.budgets.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return bad(format!("budget {b} outside [0, 1]"));
        }
        if g.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !(g.learning_rate > 0.0 && g.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", g.learning_rate));
        }
        if self.forest.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if !(self.forest.contamination > 0.0 && self.forest.contamination < 1.0) {
            return bad(format!("contamination {} outside (0, 1)", self.forest.contamination));
        }
        for d in &self.datasets {
            let f = d.train_fraction();
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("dataset `{}`: train_fraction {f} outside (0, 1)", d.name()));
            }
        }
        Ok(())
    }
}
