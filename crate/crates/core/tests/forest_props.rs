use alforest_core::features::{FeatureMatrix, FeatureVector, FEATURE_DIM};
use alforest_core::iforest::{quantile, IsolationForest, Node};
use alforest_core::ForestParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn matrix(rows: Vec<FeatureVector>) -> FeatureMatrix {
    FeatureMatrix {
        series_id: "m".into(),
        rows,
        window_size: 5,
        saliency_window: 288,
    }
}

fn random_rows(n: usize, seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0)))
        .collect()
}

/// Textbook unweighted iForest score over the forest's own trees.
fn canonical_score(forest: &IsolationForest, row: &FeatureVector) -> f64 {
    fn c(m: usize) -> f64 {
        match m {
            0 | 1 => 0.0,
            2 => 1.0,
            _ => {
                let m = m as f64;
                2.0 * ((m - 1.0).ln() + 0.577_215_664_9) - 2.0 * (m - 1.0) / m
            }
        }
    }
    let x: Vec<f64> = (0..FEATURE_DIM)
        .map(|j| (row[j] - forest.scaler.mean[j]) / forest.scaler.std[j])
        .collect();
    let mut total = 0.0;
    for tree in &forest.trees {
        let (mut node, mut depth) = (0usize, 0usize);
        let size = loop {
            match &tree.nodes[node] {
                Node::Leaf { size } => break *size,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { *left } else { *right };
                    depth += 1;
                }
            }
        };
        total += depth as f64 + c(size);
    }
    let mean = total / forest.trees.len() as f64;
    2f64.powf(-mean / c(forest.subsample_size))
}

#[test]
fn unit_weights_match_canonical_scorer() {
    let forest = IsolationForest::train(
        &matrix(random_rows(2000, 1)),
        &ForestParams {
            seed: 9,
            ..Default::default()
        },
    )
    .unwrap();
    for row in random_rows(1000, 2) {
        let got = forest.score_row(&row);
        let want = canonical_score(&forest, &row);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn far_outlier_beats_cluster() {
    let noise = Normal::new(0.0, 0.1).unwrap();
    let seeds = 40u64;
    let mut wins = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut rows: Vec<FeatureVector> = (0..500)
            .map(|_| std::array::from_fn(|_| noise.sample(&mut rng)))
            .collect();
        rows.push([5.0; FEATURE_DIM]);
        let forest = IsolationForest::train(
            &matrix(rows.clone()),
            &ForestParams {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let scores = forest.score_rows(&rows).scores;
        let p95 = quantile(&scores[..500], 0.95);
        if scores[500] > p95 {
            wins += 1;
        }
    }
    assert!(wins as f64 >= 0.95 * seeds as f64, "{wins}/{seeds}");
}

#[test]
fn contamination_places_expected_count_above_offset() {
    for (n, c) in [(1000usize, 0.03), (2000, 0.05), (500, 0.1)] {
        let m = matrix(random_rows(n, n as u64));
        let forest = IsolationForest::train(
            &m,
            &ForestParams {
                contamination: c,
                ..Default::default()
            },
        )
        .unwrap();
        let flagged = forest.classify(&forest.score(&m)).iter().filter(|&&p| p == 1).count();
        assert_eq!(flagged, (c * n as f64).ceil() as usize, "n={n} c={c}");
    }
}

#[test]
fn full_size_scores_are_probabilities() {
    let m = matrix(random_rows(10_000, 77));
    let forest = IsolationForest::train(&m, &ForestParams::default()).unwrap();
    assert_eq!(forest.n_trees(), 100);
    assert_eq!(forest.subsample_size, 256);
    assert!(forest.score(&m).scores.iter().all(|&s| s > 0.0 && s < 1.0));
}

#[test]
fn training_is_reproducible_and_serializes_exactly() {
    let m = matrix(random_rows(800, 5));
    let p = ForestParams {
        n_trees: 30,
        seed: 123,
        ..Default::default()
    };
    let a = IsolationForest::train(&m, &p).unwrap();
    let b = IsolationForest::train(&m, &p).unwrap();
    assert_eq!(a, b);
    let text = a.to_model_json().unwrap();
    let back = IsolationForest::from_model_json(&text).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.to_model_json().unwrap(), text);
    let c = IsolationForest::train(&m, &ForestParams { seed: 124, ..p }).unwrap();
    assert_ne!(a.trees, c.trees);
}

fn small_forest() -> (IsolationForest, Vec<FeatureVector>) {
    let rows = random_rows(300, 11);
    let forest = IsolationForest::train(
        &matrix(rows.clone()),
        &ForestParams {
            n_trees: 25,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    (forest, rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_weight_update_normalizes(picks in prop::collection::vec(0usize..300, 1..20), eta in 0.0f64..=1.0) {
        let (forest, rows) = small_forest();
        let anomalies: Vec<_> = picks.iter().map(|&i| rows[i]).collect();
        let updated = forest.update_tree_weights(&anomalies, eta);
        let sum: f64 = updated.tree_weights.iter().sum();
        prop_assert!((sum - forest.n_trees() as f64).abs() <= 1e-9);
        prop_assert!(updated.tree_weights.iter().all(|&w| w > 0.0));
        prop_assert_eq!(updated.offset, forest.offset);
        prop_assert_eq!(&updated.trees, &forest.trees);
    }

    #[test]
    fn score_strictly_decreases_with_expected_depth(
        weights in prop::collection::vec(0.01f64..5.0, 25),
        a in 0usize..300,
        b in 0usize..300,
    ) {
        let (forest, rows) = small_forest();
        let forest = forest.with_tree_weights(weights);
        let (ha, hb) = (forest.expected_path_length(&rows[a]), forest.expected_path_length(&rows[b]));
        let (sa, sb) = (forest.score_row(&rows[a]), forest.score_row(&rows[b]));
        if ha < hb {
            prop_assert!(sa > sb);
        } else if ha > hb {
            prop_assert!(sa < sb);
        } else {
            prop_assert_eq!(sa, sb);
        }
    }
}

#[test]
fn learning_rate_limits() {
    let (forest, rows) = small_forest();
    let anomalies = &rows[..5];
    assert_eq!(
        forest.update_tree_weights(anomalies, 0.0).tree_weights,
        forest.tree_weights
    );
    let full = forest.update_tree_weights(anomalies, 1.0);
    let half = forest.update_tree_weights(anomalies, 0.5);
    for ((h, f), o) in half
        .tree_weights
        .iter()
        .zip(&full.tree_weights)
        .zip(&forest.tree_weights)
    {
        assert!((h - 0.5 * (f + o)).abs() < 1e-12);
    }
    assert_eq!(forest.update_tree_weights(&[], 1.0), forest);
}
