//! Turns dataset entries into train/test splits, one per KPI.

use std::path::Path;

use alforest_core::timeseries::{load_csv, load_multi_csv, CsvSchema};
use alforest_core::{synth_generate, SynthSpec, TimeSeries};

use crate::config::DatasetConfig;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq)]
pub struct KpiSplit {
    pub dataset: String,
    pub kpi: String,
    pub train: TimeSeries,
    pub test: TimeSeries,
}

/// Datasets with files already parsed; synthetic ones are generated per
/// seed.
#[derive(Debug, Clone)]
pub enum LoadedDataset {
    Fixed(Vec<KpiSplit>),
    Synthetic {
        name: String,
        spec: SynthSpec,
        train_fraction: f64,
    },
}

impl LoadedDataset {
    pub fn load(config: &DatasetConfig) -> Result<Self, BenchError> {
        let name = config.name();
        let schema = CsvSchema::default();
        let err = |reason: String| BenchError::Dataset {
            name: name.clone(),
            reason,
        };
        match config {
            DatasetConfig::Synthetic {
                spec, train_fraction, ..
            } => Ok(LoadedDataset::Synthetic {
                name: name.clone(),
                spec: spec.clone(),
                train_fraction: *train_fraction,
            }),
            DatasetConfig::Csv {
                train,
                test,
                train_fraction,
                ..
            } => {
                let train_ts = load_csv(train, &schema).map_err(|e| err(format!("{}: {e}", train.display())))?;
                let kpi = train_ts.id().to_string();
                let split = match test {
                    Some(test) => {
                        let test_ts = load_csv(test, &schema).map_err(|e| err(format!("{}: {e}", test.display())))?;
                        (train_ts.fill_gaps(), test_ts.fill_gaps())
                    }
                    None => split_series(&train_ts.fill_gaps(), *train_fraction).map_err(err)?,
                };
                Ok(LoadedDataset::Fixed(vec![KpiSplit {
                    dataset: name.clone(),
                    kpi,
                    train: split.0,
                    test: split.1,
                }]))
            }
            DatasetConfig::Aiops {
                train,
                test,
                kpis,
                train_fraction,
                ..
            } => {
                let load = |p: &Path| load_multi_csv(p, &schema).map_err(|e| err(format!("{}: {e}", p.display())));
                let mut trains = load(train)?;
                if let Some(wanted) = kpis {
                    trains.retain(|ts| wanted.iter().any(|w| w == ts.id()));
                    if trains.len() != wanted.len() {
                        return Err(err(format!(
                            "only {} of {} requested KPIs found",
                            trains.len(),
                            wanted.len()
                        )));
                    }
                }
                let tests = test.as_deref().map(load).transpose()?;
                let mut out = Vec::with_capacity(trains.len());
                for ts in trains {
                    let (tr, te) = match &tests {
                        Some(tests) => {
                            let te = tests
                                .iter()
                                .find(|t| t.id() == ts.id())
                                .ok_or_else(|| err(format!("KPI `{}` missing from test file", ts.id())))?;
                            (ts.fill_gaps(), te.fill_gaps())
                        }
                        None => split_series(&ts.fill_gaps(), *train_fraction).map_err(err)?,
                    };
                    out.push(KpiSplit {
                        dataset: name.clone(),
                        kpi: ts.id().to_string(),
                        train: tr,
                        test: te,
                    });
                }
                Ok(LoadedDataset::Fixed(out))
            }
        }
    }

    /// KPIs for one grid seed.
    pub fn kpis(&self, seed: u64) -> Result<Vec<KpiSplit>, BenchError> {
        match self {
            LoadedDataset::Fixed(kpis) => Ok(kpis.clone()),
            LoadedDataset::Synthetic {
                name,
                spec,
                train_fraction,
            } => {
                let err = |reason: String| BenchError::Dataset {
                    name: name.clone(),
                    reason,
                };
                let ts = synth_generate(&SynthSpec { seed, ..spec.clone() }).map_err(|e| err(e.to_string()))?;
                let (train, test) = split_series(&ts, *train_fraction).map_err(err)?;
                Ok(vec![KpiSplit {
                    dataset: name.clone(),
                    kpi: ts.id().to_string(),
                    train,
                    test,
                }])
            }
        }
    }
}

/// Splits at `round(fraction * n)`, keeping at least two points per side.
pub fn split_series(ts: &TimeSeries, fraction: f64) -> Result<(TimeSeries, TimeSeries), String> {
    let n = ts.len();
    if n < 4 {
        return Err(format!("series `{}` has {n} points, need at least 4 to split", ts.id()));
    }
    let at = ((fraction * n as f64).round() as usize).clamp(2, n - 2);
    ts.split_at(at).map_err(|e| e.to_string())
}
