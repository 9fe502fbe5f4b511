mod common;

use common::*;
use hetloss_core::{high_confidence_subset_eval, weighted_f1};
use proptest::prelude::*;
use rand::Rng as _;

/// Labels producing the confusion matrix `m[truth][pred]`.
fn from_confusion(m: &[[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for truth in 0..2 {
        for pred in 0..2 {
            for _ in 0..m[truth][pred] {
                p.push(pred);
                t.push(truth);
            }
        }
    }
    (p, t)
}

/// F1 from precision and recall, each with the 0/0 = 0 convention.
fn oracle_weighted_f1(p: &[usize], t: &[usize], n: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..n {
        let tp = p.iter().zip(t).filter(|&(&a, &b)| a == c && b == c).count() as f64;
        let pred = p.iter().filter(|&&a| a == c).count() as f64;
        let sup = t.iter().filter(|&&b| b == c).count() as f64;
        let prec = if pred > 0.0 { tp / pred } else { 0.0 };
        let rec = if sup > 0.0 { tp / sup } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        total += sup * f1;
    }
    total / t.len() as f64
}

#[test]
fn hand_computed_binary_case() {
    let (p, t) = from_confusion(&[[8, 2], [3, 7]]);
    let r = weighted_f1(&p, &t, 2).unwrap();
    assert!((r.per_class_f1[0] - 16.0 / 21.0).abs() < 1e-15);
    assert!((r.per_class_f1[1] - 14.0 / 19.0).abs() < 1e-15);
    let expected = (16.0 / 21.0 + 14.0 / 19.0) / 2.0;
    assert!((r.weighted_f1 - expected).abs() < 1e-15);
    assert!((r.weighted_f1 - 0.749373433583).abs() < 1e-12);
    assert!((r.weighted_f1 - oracle_weighted_f1(&p, &t, 2)).abs() < 1e-15);
    assert_eq!(r.accuracy, 0.75);
    assert_eq!(r.confusion, vec![vec![8, 2], vec![3, 7]]);
    // balanced supports: weighted equals macro
    assert!((r.weighted_f1 - r.macro_f1()).abs() < 1e-15);
}

#[test]
fn subset_eval_equals_filter_then_score() {
    let mut r = rng(60);
    let n = 500;
    let truths: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
    let preds: Vec<usize> = truths
        .iter()
        .map(|&t| if r.random::<f64>() < 0.7 { t } else { r.random_range(0..3) })
        .collect();
    let confs: Vec<f64> = (0..n).map(|_| 0.5 + 0.5 * r.random::<f64>()).collect();
    for theta in [0.95, 0.98] {
        let sub = high_confidence_subset_eval(&preds, &confs, &truths, 3, theta).unwrap();
        let keep: Vec<usize> = (0..n).filter(|&i| confs[i] > theta).collect();
        let p: Vec<usize> = keep.iter().map(|&i| preds[i]).collect();
        let t: Vec<usize> = keep.iter().map(|&i| truths[i]).collect();
        assert_eq!(sub.count, keep.len());
        assert_eq!(sub.fraction, keep.len() as f64 / n as f64);
        let res = sub.result.unwrap();
        assert!((res.weighted_f1 - oracle_weighted_f1(&p, &t, 3)).abs() < 1e-14);
    }
}

#[test]
fn threshold_is_strict() {
    let s = high_confidence_subset_eval(&[0, 1], &[0.95, 0.96], &[0, 1], 2, 0.95).unwrap();
    assert_eq!(s.count, 1);
}

proptest! {
    #[test]
    fn agrees_with_oracle_and_stays_in_range(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200),
    ) {
        let p: Vec<usize> = pairs.iter().map(|x| x.0).collect();
        let t: Vec<usize> = pairs.iter().map(|x| x.1).collect();
        let r = weighted_f1(&p, &t, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.weighted_f1));
        prop_assert!((0.0..=1.0).contains(&r.accuracy));
        prop_assert!((r.weighted_f1 - oracle_weighted_f1(&p, &t, 4)).abs() < 1e-12);
        prop_assert_eq!(r.n(), pairs.len());
    }

    #[test]
    fn relabeling_classes_changes_nothing(
        pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..100),
    ) {
        let perm = [2, 0, 1];
        let p: Vec<usize> = pairs.iter().map(|x| x.0).collect();
        let t: Vec<usize> = pairs.iter().map(|x| x.1).collect();
        let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let tp: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
        let a = weighted_f1(&p, &t, 3).unwrap();
        let b = weighted_f1(&pp, &tp, 3).unwrap();
        prop_assert!((a.weighted_f1 - b.weighted_f1).abs() < 1e-12);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }
}
