//! Causal per-point feature extraction.
//!
//! Every point `x_t` is mapped to six values: five differences between `x_t`
//! and statistics of the trailing window `[x_{t-w}, .., x_{t-1}]`, plus the
//! spectral-residual saliency of `x_t` within the trailing one-day
//! subsequence. Row `t` only ever reads `x_0..=x_t`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::timeseries::TimeSeries;

pub const FEATURE_DIM: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["max", "min", "mean", "naive", "linear_residual", "saliency_map"];

pub type FeatureVector = [f64; FEATURE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Trailing window length for the statistical features.
    pub window_size: usize,
    /// Saliency subsequence length; `None` means one day of points.
    pub saliency_window: Option<usize>,
    /// Width of the moving average applied to the log amplitude spectrum.
    pub filter_width: usize,
    /// Guard added to amplitudes before taking logs.
    pub epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_size: 5,
            saliency_window: None,
            filter_width: 3,
            epsilon: 1e-8,
        }
    }
}

impl FeatureConfig {
    pub fn saliency_window_for(&self, ts: &TimeSeries) -> usize {
        self.saliency_window.unwrap_or_else(|| ts.points_per_day()).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub series_id: String,
    pub rows: Vec<FeatureVector>,
    pub window_size: usize,
    pub saliency_window: usize,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &FeatureVector {
        &self.rows[i]
    }

    /// Rows restricted to `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            series_id: self.series_id.clone(),
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
            window_size: self.window_size,
            saliency_window: self.saliency_window,
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        FeatureMatrix {
            series_id: self.series_id.clone(),
            rows: self.rows[range].to_vec(),
            window_size: self.window_size,
            saliency_window: self.saliency_window,
        }
    }

    /// Debug dump: one row per point with the six named columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(FEATURE_NAMES)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-feature z-score transform fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: FeatureVector,
    pub std: FeatureVector,
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; FEATURE_DIM],
            std: [1.0; FEATURE_DIM],
        }
    }

    pub fn fit(rows: &[FeatureVector]) -> Self {
        if rows.is_empty() {
            return Self::identity();
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; FEATURE_DIM];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; FEATURE_DIM];
        for row in rows {
            for j in 0..FEATURE_DIM {
                let d = row[j] - mean[j];
                std[j] += d * d;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            // constant features pass through centred but unscaled
            if !(*s > 0.0) || !s.is_finite() {
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    pub fn transform(&self, row: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; FEATURE_DIM];
        for j in 0..FEATURE_DIM {
            out[j] = (row[j] - self.mean[j]) / self.std[j];
        }
        out
    }
}

/// The five window-difference features of point `t`:
/// `(max, min, mean, naive, linear_residual)`.
///
/// The window is the up to `window_size` points preceding `t`; shorter
/// windows are used during cold start and `t = 0` yields all zeros.
pub fn window_features(values: &[f64], t: usize, window_size: usize) -> [f64; 5] {
    if t == 0 {
        return [0.0; 5];
    }
    let x = values[t];
    let window = &values[t.saturating_sub(window_size)..t];
    let max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = window.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let prev = values[t - 1];
    [x - max, x - min, x - mean, x - prev, x - linear_extrapolation(window)]
}

/// Least-squares line through `(i, window[i])`, evaluated at `i = len`.
/// A single point extrapolates to itself.
fn linear_extrapolation(window: &[f64]) -> f64 {
    let m = window.len();
    if m == 1 {
        return window[0];
    }
    let x_bar = (m - 1) as f64 / 2.0;
    let y_bar = window.iter().sum::<f64>() / m as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in window.iter().enumerate() {
        let dx = i as f64 - x_bar;
        sxy += dx * (y - y_bar);
        sxx += dx * dx;
    }
    y_bar + sxy / sxx * (m as f64 - x_bar)
}

/// Spectral-residual saliency transform with a cached FFT planner.
pub struct SaliencyTransform {
    planner: FftPlanner<f64>,
    filter_width: usize,
    epsilon: f64,
}

impl SaliencyTransform {
    pub fn new(filter_width: usize, epsilon: f64) -> Self {
        Self {
            planner: FftPlanner::new(),
            filter_width: filter_width.max(1),
            epsilon,
        }
    }

    fn plans(&mut self, n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
        (self.planner.plan_fft_forward(n), self.planner.plan_fft_inverse(n))
    }

    /// Saliency of every point of `xs`.
    ///
    /// Amplitude and phase come from the DFT; the spectral residual is the
    /// log amplitude minus its trailing moving average; the map is the
    /// magnitude of the inverse DFT of `exp(residual + i*phase)`. Frequency
    /// bins whose amplitude is at most `epsilon` carry no signal and are
    /// dropped, and a constant (or length < 2) input maps to all zeros.
    pub fn map(&mut self, xs: &[f64]) -> Vec<f64> {
        let n = xs.len();
        if n < 2 || xs.iter().all(|&v| v == xs[0]) {
            return vec![0.0; n];
        }
        let (forward, inverse) = self.plans(n);
        let mut spectrum: Vec<Complex<f64>> = xs.iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward.process(&mut spectrum);

        let amplitude: Vec<f64> = spectrum.iter().map(|c| c.norm()).collect();
        let log_amp: Vec<f64> = amplitude.iter().map(|a| (a + self.epsilon).ln()).collect();
        let smoothed = trailing_average(&log_amp, self.filter_width);

        for k in 0..n {
            spectrum[k] = if amplitude[k] <= self.epsilon {
                Complex::new(0.0, 0.0)
            } else {
                let residual = log_amp[k] - smoothed[k];
                // unit phasor carrying the original phase
                (spectrum[k] / amplitude[k]) * residual.exp()
            };
        }
        inverse.process(&mut spectrum);
        let scale = 1.0 / n as f64;
        spectrum.iter().map(|c| c.norm() * scale).collect()
    }

    /// Saliency of point `t` inside its trailing subsequence of `window`
    /// points.
    pub fn at(&mut self, values: &[f64], t: usize, window: usize) -> f64 {
        let start = (t + 1).saturating_sub(window.max(1));
        let map = self.map(&values[start..=t]);
        map.last().copied().unwrap_or(0.0)
    }
}

fn trailing_average(xs: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= width {
            sum -= xs[i - width];
        }
        out.push(sum / (i + 1).min(width) as f64);
    }
    out
}

/// Convenience wrapper for the saliency of a single point.
pub fn saliency(ts: &TimeSeries, t: usize, config: &FeatureConfig) -> f64 {
    let mut transform = SaliencyTransform::new(config.filter_width, config.epsilon);
    transform.at(ts.values(), t, config.saliency_window_for(ts))
}

/// Full feature matrix for a series. Rows are computed in parallel; each
/// row is a pure function of the prefix ending at it.
pub fn featurize(ts: &TimeSeries, config: &FeatureConfig) -> FeatureMatrix {
    let values = ts.values();
    let window = config.saliency_window_for(ts);
    let rows = (0..values.len())
        .into_par_iter()
        .map_init(
            || SaliencyTransform::new(config.filter_width, config.epsilon),
            |sr, t| {
                let w = window_features(values, t, config.window_size);
                [w[0], w[1], w[2], w[3], w[4], sr.at(values, t, window)]
            },
        )
        .collect();
    FeatureMatrix {
        series_id: ts.id().to_string(),
        rows,
        window_size: config.window_size,
        saliency_window: window,
    }
}
