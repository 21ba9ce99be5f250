//! Isolation Forest with per-tree weights and an adjustable decision offset.
//!
//! Scores follow the usual `2^(-E[h(x)] / c(psi))` form, except that the
//! expectation over trees is a weighted mean. With all weights equal to one
//! this is the canonical Isolation Forest score. Points whose score reaches
//! the offset are classified anomalous.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, FeatureVector, Scaler, FEATURE_DIM};

/// Euler-Mascheroni constant as used by the path-length normaliser.
pub const EULER_GAMMA: f64 = 0.5772156649;

pub const MODEL_FORMAT: &str = "alforest-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("model file: {0}")]
    Model(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Average path length of an unsuccessful search in a binary search tree
/// holding `m` points.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = m as f64;
            2.0 * ((m - 1.0).ln() + EULER_GAMMA) - 2.0 * (m - 1.0) / m
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` uses `min(256, n)`.
    pub subsample_size: Option<usize>,
    pub contamination: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: None,
            contamination: 0.03,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn resolved_subsample(&self, n: usize) -> usize {
        self.subsample_size.unwrap_or_else(|| n.min(256))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// A single isolation tree stored as a flat node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl IsoTree {
    /// Grows a tree on `sample` (already scaled rows).
    pub fn grow<R: Rng>(sample: &[FeatureVector], max_depth: usize, rng: &mut R) -> Self {
        let mut tree = IsoTree {
            nodes: Vec::new(),
            max_depth,
        };
        let mut idx: Vec<usize> = (0..sample.len()).collect();
        tree.grow_node(sample, &mut idx, 0, rng);
        tree
    }

    fn grow_node<R: Rng>(&mut self, data: &[FeatureVector], idx: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: idx.len() });
        if idx.len() <= 1 || depth >= self.max_depth {
            return id;
        }

        let mut lo = [f64::INFINITY; FEATURE_DIM];
        let mut hi = [f64::NEG_INFINITY; FEATURE_DIM];
        for &i in idx.iter() {
            for j in 0..FEATURE_DIM {
                lo[j] = lo[j].min(data[i][j]);
                hi[j] = hi[j].max(data[i][j]);
            }
        }
        let splittable: Vec<usize> = (0..FEATURE_DIM).filter(|&j| hi[j] > lo[j]).collect();
        if splittable.is_empty() {
            return id;
        }
        let feature = splittable[rng.gen_range(0..splittable.len())];
        let threshold = loop {
            let v = rng.gen_range(lo[feature]..hi[feature]);
            if v > lo[feature] {
                break v;
            }
        };

        // partition in place: values below the threshold go left
        let mut mid = 0;
        for k in 0..idx.len() {
            if data[idx[k]][feature] < threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        let left = self.grow_node(data, left_idx, depth + 1, rng);
        let right = self.grow_node(data, right_idx, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Depth and size of the leaf reached by `x`.
    pub fn leaf(&self, x: &FeatureVector) -> (usize, usize) {
        let mut node = 0;
        let mut depth = 0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return (depth, size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[feature] < threshold { left } else { right };
                    depth += 1;
                }
            }
        }
    }

    /// `h(x)`: leaf depth plus the expected remaining depth of its points.
    pub fn path_length(&self, x: &FeatureVector) -> f64 {
        let (depth, size) = self.leaf(x);
        depth as f64 + average_path_length(size)
    }

    /// Longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Anomaly scores in `(0, 1)` aligned with a feature matrix; higher means
/// more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.scores[i]
    }
}

impl std::ops::Index<usize> for ScoreVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.scores[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsoTree>,
    /// Positive, summing to the number of trees.
    pub tree_weights: Vec<f64>,
    pub subsample_size: usize,
    pub offset: f64,
    pub contamination: f64,
    pub scaler: Scaler,
    pub seed: u64,
}

/// Linear-interpolation quantile of `values` (the common "type 7" rule).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Weights proportional to each tree's mean score on known anomalies,
/// rescaled to sum to the number of trees.
pub fn normalized_tree_weights(mean_anomaly_scores: &[f64]) -> Vec<f64> {
    let t = mean_anomaly_scores.len() as f64;
    let total: f64 = mean_anomaly_scores.iter().sum();
    mean_anomaly_scores.iter().map(|m| t * m / total).collect()
}

impl IsolationForest {
    /// Trains on every row of `features`. Tree `i` draws from its own
    /// ChaCha8 stream, so the result does not depend on thread scheduling.
    pub fn train(features: &FeatureMatrix, params: &ForestParams) -> Result<Self, ForestError> {
        let n = features.len();
        let psi = params.resolved_subsample(n);
        if params.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be positive".into()));
        }
        if psi < 2 || psi > n {
            return Err(ForestError::InvalidParams(format!(
                "need n >= subsample >= 2, got n = {n}, subsample = {psi}"
            )));
        }
        if !(params.contamination > 0.0 && params.contamination < 1.0) {
            return Err(ForestError::InvalidParams(format!(
                "contamination {} outside (0, 1)",
                params.contamination
            )));
        }

        let scaler = Scaler::fit(&features.rows);
        let scaled: Vec<FeatureVector> = features.rows.iter().map(|r| scaler.transform(r)).collect();
        let max_depth = (psi as f64).log2().ceil() as usize;

        let trees: Vec<IsoTree> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                let sample: Vec<FeatureVector> =
                    index::sample(&mut rng, n, psi).into_iter().map(|i| scaled[i]).collect();
                IsoTree::grow(&sample, max_depth, &mut rng)
            })
            .collect();

        let mut forest = Self {
            tree_weights: vec![1.0; trees.len()],
            trees,
            subsample_size: psi,
            offset: 0.5,
            contamination: params.contamination,
            scaler,
            seed: params.seed,
        };
        let train_scores = forest.score(features);
        forest.offset = quantile(&train_scores.scores, 1.0 - params.contamination);
        Ok(forest)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn normalizer(&self) -> f64 {
        average_path_length(self.subsample_size)
    }

    /// Path length of an unscaled row in every tree.
    pub fn path_lengths(&self, row: &FeatureVector) -> Vec<f64> {
        let x = self.scaler.transform(row);
        self.trees.iter().map(|t| t.path_length(&x)).collect()
    }

    /// Per-tree scores `2^(-h_t(x) / c(psi))` of an unscaled row.
    pub fn tree_scores(&self, row: &FeatureVector) -> Vec<f64> {
        let c = self.normalizer();
        self.path_lengths(row).into_iter().map(|h| (-h / c).exp2()).collect()
    }

    /// Weighted mean path length of an unscaled row.
    pub fn expected_path_length(&self, row: &FeatureVector) -> f64 {
        let x = self.scaler.transform(row);
        let mut num = 0.0;
        let mut den = 0.0;
        for (tree, w) in self.trees.iter().zip(&self.tree_weights) {
            num += w * tree.path_length(&x);
            den += w;
        }
        num / den
    }

    pub fn score_row(&self, row: &FeatureVector) -> f64 {
        (-self.expected_path_length(row) / self.normalizer()).exp2()
    }

    pub fn score(&self, features: &FeatureMatrix) -> ScoreVector {
        self.score_rows(&features.rows)
    }

    pub fn score_rows(&self, rows: &[FeatureVector]) -> ScoreVector {
        ScoreVector {
            scores: rows.par_iter().map(|r| self.score_row(r)).collect(),
        }
    }

    /// 1 where the score reaches the offset.
    pub fn classify(&self, scores: &ScoreVector) -> Vec<u8> {
        classify_with_offset(scores, self.offset)
    }

    pub fn with_offset(&self, offset: f64) -> Self {
        Self { offset, ..self.clone() }
    }

    pub fn with_tree_weights(&self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.trees.len());
        Self {
            tree_weights: weights,
            ..self.clone()
        }
    }

    /// Reweights trees by how highly each one scores the given anomalous
    /// rows. `learning_rate` blends the new weights with the current ones
    /// (1 replaces them). Empty input leaves the forest unchanged, as does
    /// input on which every tree scores zero.
    pub fn update_tree_weights(&self, anomalies: &[FeatureVector], learning_rate: f64) -> Self {
        if anomalies.is_empty() {
            return self.clone();
        }
        let t = self.n_trees();
        let mut means = vec![0.0; t];
        for row in anomalies {
            for (m, s) in means.iter_mut().zip(self.tree_scores(row)) {
                *m += s;
            }
        }
        let count = anomalies.len() as f64;
        means.iter_mut().for_each(|m| *m /= count);
        if means.iter().sum::<f64>() <= 0.0 {
            return self.clone();
        }
        let target = normalized_tree_weights(&means);
        let eta = learning_rate.clamp(0.0, 1.0);
        let weights = if eta == 1.0 {
            target
        } else {
            self.tree_weights
                .iter()
                .zip(&target)
                .map(|(old, new)| (1.0 - eta) * old + eta * new)
                .collect()
        };
        self.with_tree_weights(weights)
    }

    pub fn to_model_json(&self) -> Result<String, ForestError> {
        let file = ModelFileRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            forest: self,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_model_json(text: &str) -> Result<Self, ForestError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(ForestError::Model(format!("unexpected format `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(ForestError::Model(format!("unsupported version {}", file.version)));
        }
        let forest = file.forest;
        if forest.tree_weights.len() != forest.trees.len() || forest.trees.is_empty() {
            return Err(ForestError::Model("tree and weight counts differ".into()));
        }
        Ok(forest)
    }

    pub fn write_model<W: Write>(&self, mut w: W) -> Result<(), ForestError> {
        w.write_all(self.to_model_json()?.as_bytes())?;
        Ok(())
    }

    pub fn read_model<R: Read>(mut r: R) -> Result<Self, ForestError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_model_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        std::fs::write(path, self.to_model_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        Self::from_model_json(&std::fs::read_to_string(path)?)
    }
}

pub fn classify_with_offset(scores: &ScoreVector, offset: f64) -> Vec<u8> {
    scores.scores.iter().map(|&s| u8::from(s >= offset)).collect()
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    version: u32,
    forest: &'a IsolationForest,
}

#[derive(Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    forest: IsolationForest,
}
