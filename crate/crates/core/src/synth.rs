//! Labelled synthetic KPIs: a noisy sinusoid with injected spikes, dips,
//! bursts and level shifts.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::TimeSeries;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Single point far above the signal.
    Spike,
    /// Single point far below the signal.
    Dip,
    /// Short run of elevated points.
    Burst,
    /// Sustained step change that later reverts.
    LevelShift,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::Spike,
        AnomalyKind::Dip,
        AnomalyKind::Burst,
        AnomalyKind::LevelShift,
    ];
}

impl FromStr for AnomalyKind {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "spike" => Ok(AnomalyKind::Spike),
            "dip" => Ok(AnomalyKind::Dip),
            "burst" => Ok(AnomalyKind::Burst),
            "level_shift" => Ok(AnomalyKind::LevelShift),
            other => Err(SynthError::InvalidSpec(format!("unknown anomaly type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    /// Seasonal period in points.
    pub period: usize,
    pub noise_std: f64,
    /// Target fraction of anomalous points, in `(0, 0.1]`.
    pub anomaly_rate: f64,
    /// Empty means a clean series.
    pub anomaly_types: Vec<AnomalyKind>,
    pub seed: u64,
    pub amplitude: f64,
    pub level: f64,
    /// Seconds between points.
    pub interval: i64,
    /// Anomaly magnitude in units of `max(noise_std, 0.1 * amplitude)`.
    pub magnitude: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 10_000,
            period: 288,
            noise_std: 0.1,
            anomaly_rate: 0.01,
            anomaly_types: AnomalyKind::ALL.to_vec(),
            seed: 0,
            amplitude: 1.0,
            level: 10.0,
            interval: 300,
            magnitude: 8.0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.period == 0 {
            return bad("period must be positive".into());
        }
        if self.interval <= 0 {
            return bad("interval must be positive".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std {} must be non-negative", self.noise_std));
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate <= 0.1) {
            return bad(format!("anomaly_rate {} outside (0, 0.1]", self.anomaly_rate));
        }
        if !(self.magnitude > 0.0) {
            return bad("magnitude must be positive".into());
        }
        Ok(())
    }
}

/// Generates the series described by `spec`; identical specs give identical
/// series.
pub fn synth_generate(spec: &SynthSpec) -> Result<TimeSeries, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let omega = 2.0 * std::f64::consts::PI / spec.period as f64;
    let mut values: Vec<f64> = (0..n)
        .map(|i| spec.level + spec.amplitude * (omega * i as f64).sin())
        .collect();
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    let mut labels = vec![0u8; n];

    if !spec.anomaly_types.is_empty() {
        let unit = spec.noise_std.max(0.1 * spec.amplitude.abs()).max(f64::MIN_POSITIVE);
        let target = ((spec.anomaly_rate * n as f64).round() as usize).max(1);
        inject(&mut values, &mut labels, spec, unit, target, &mut rng);
    }

    let timestamps = (0..n as i64).map(|i| i * spec.interval).collect();
    TimeSeries::new(format!("synth-{}", spec.seed), timestamps, values, Some(labels))
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

fn inject(values: &mut [f64], labels: &mut [u8], spec: &SynthSpec, unit: f64, target: usize, rng: &mut ChaCha8Rng) {
    let n = values.len();
    // keep events apart so each forms its own segment
    let margin = 10usize;
    let mut placed = 0usize;
    let mut attempts = 0usize;
    while placed < target && attempts < 100 * target + 1000 {
        attempts += 1;
        let kind = spec.anomaly_types[rng.gen_range(0..spec.anomaly_types.len())];
        let wanted = match kind {
            AnomalyKind::Spike | AnomalyKind::Dip => 1,
            AnomalyKind::Burst => rng.gen_range(3..=10),
            AnomalyKind::LevelShift => rng.gen_range(8..=20),
        };
        let len = wanted.min(target - placed).min(n);
        let start = rng.gen_range(0..=n - len);
        let lo = start.saturating_sub(margin);
        let hi = (start + len + margin).min(n);
        if labels[lo..hi].contains(&1) {
            continue;
        }
        let scale = spec.magnitude * unit * rng.gen_range(0.8..1.2);
        match kind {
            AnomalyKind::Spike => values[start] += scale,
            AnomalyKind::Dip => values[start] -= scale,
            AnomalyKind::Burst => {
                for v in &mut values[start..start + len] {
                    *v += scale * rng.gen_range(0.6..1.0);
                }
            }
            AnomalyKind::LevelShift => {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for v in &mut values[start..start + len] {
                    *v += sign * 0.75 * scale;
                }
            }
        }
        labels[start..start + len].fill(1);
        placed += len;
    }
}
