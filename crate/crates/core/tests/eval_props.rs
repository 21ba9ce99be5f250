use alforest_core::eval::{adjust_predictions, evaluate};
use proptest::prelude::*;

/// Delay-adjusted F1 computed segment by segment with plain loops.
fn naive_f1(truth: &[u8], pred: &[u8], k: usize) -> (usize, usize, usize, f64) {
    let n = truth.len();
    let mut adjusted = pred.to_vec();
    let mut i = 0;
    while i < n {
        if truth[i] == 1 {
            let start = i;
            while i < n && truth[i] == 1 {
                i += 1;
            }
            let end = i; // exclusive
            let mut hit = false;
            for j in start..end {
                if j - start <= k && pred[j] == 1 {
                    hit = true;
                }
            }
            for a in adjusted.iter_mut().take(end).skip(start) {
                *a = if hit { 1 } else { 0 };
            }
        } else {
            i += 1;
        }
    }
    let tp = (0..n).filter(|&j| truth[j] == 1 && adjusted[j] == 1).count();
    let fp = (0..n).filter(|&j| truth[j] == 0 && adjusted[j] == 1).count();
    let fnn = (0..n).filter(|&j| truth[j] == 1 && adjusted[j] == 0).count();
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fnn == 0 {
        0.0
    } else {
        tp as f64 / (tp + fnn) as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (tp, fp, fnn, f1)
}

fn instance() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1usize..=200).prop_flat_map(|n| (prop::collection::vec(0u8..=1, n), prop::collection::vec(0u8..=1, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_naive_reference((truth, pred) in instance()) {
        for k in 0..=10 {
            let r = evaluate(&truth, &pred, k).unwrap();
            let (tp, fp, fnn, f1) = naive_f1(&truth, &pred, k);
            prop_assert_eq!((r.tp, r.fp, r.fn_), (tp, fp, fnn));
            prop_assert_eq!(r.f1, f1);
        }
    }

    #[test]
    fn monotone_in_delay((truth, pred) in instance()) {
        let f1s: Vec<f64> = (0..=12).map(|k| evaluate(&truth, &pred, k).unwrap().f1).collect();
        prop_assert!(f1s.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn adjustment_is_idempotent((truth, pred) in instance(), k in 0usize..12) {
        let once = adjust_predictions(&truth, &pred, k).unwrap();
        prop_assert_eq!(adjust_predictions(&truth, &once, k).unwrap(), once);
    }

    #[test]
    fn long_delay_is_any_hit((truth, pred) in instance()) {
        let n = truth.len();
        let adjusted = adjust_predictions(&truth, &pred, n).unwrap();
        let any_hit = adjust_predictions(&truth, &pred, usize::MAX).unwrap();
        prop_assert_eq!(adjusted, any_hit);
    }
}
