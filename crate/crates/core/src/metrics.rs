//! Accuracy, per-class F1 and support-weighted F1.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    /// Σ_c support_c·F1_c / Σ_c support_c.
    pub weighted_f1: f64,
    pub supports: Vec<usize>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalResult {
    pub fn n(&self) -> usize {
        self.supports.iter().sum()
    }

    pub fn macro_f1(&self) -> f64 {
        self.per_class_f1.iter().sum::<f64>() / self.per_class_f1.len() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions against truths over `n_classes` classes. A class with
/// no true and no predicted instances gets F1 = 0.
pub fn weighted_f1(predictions: &[usize], truths: &[usize], n_classes: usize) -> Result<EvalResult> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            what: "prediction count",
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        for label in [p, t] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
        }
        confusion[t][p] += 1;
    }

    let supports: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted: Vec<usize> = (0..n_classes)
        .map(|c| confusion.iter().map(|row| row[c]).sum())
        .collect();
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();

    let mut precision = Vec::with_capacity(n_classes);
    let mut recall = Vec::with_capacity(n_classes);
    let mut per_class_f1 = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let tp = confusion[c][c];
        precision.push(ratio(tp, predicted[c]));
        recall.push(ratio(tp, supports[c]));
        // 2PR/(P+R) = 2tp / (2tp + fp + fn)
        per_class_f1.push(ratio(2 * tp, predicted[c] + supports[c]));
    }
    let n = truths.len();
    let weighted = per_class_f1
        .iter()
        .zip(&supports)
        .map(|(f, &s)| f * s as f64)
        .sum::<f64>()
        / n as f64;

    Ok(EvalResult {
        accuracy: ratio(correct, n),
        precision,
        recall,
        per_class_f1,
        weighted_f1: weighted,
        supports,
        confusion,
    })
}

/// Evaluation restricted to samples whose confidence is strictly above `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetEval {
    pub theta: f64,
    /// `None` when no sample clears the threshold.
    pub result: Option<EvalResult>,
    pub count: usize,
    pub fraction: f64,
}

impl SubsetEval {
    pub fn is_empty(&self) -> bool {
        self.result.is_none()
    }
}

pub fn high_confidence_subset_eval(
    predictions: &[usize],
    confidences: &[f64],
    truths: &[usize],
    n_classes: usize,
    theta: f64,
) -> Result<SubsetEval> {
    if predictions.len() != truths.len() || confidences.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            what: "aligned lengths",
            expected: truths.len(),
            found: if predictions.len() != truths.len() {
                predictions.len()
            } else {
                confidences.len()
            },
        });
    }
    let keep: Vec<usize> = (0..truths.len()).filter(|&i| confidences[i] > theta).collect();
    let fraction = ratio(keep.len(), truths.len());
    let result = if keep.is_empty() {
        None
    } else {
        let p: Vec<usize> = keep.iter().map(|&i| predictions[i]).collect();
        let t: Vec<usize> = keep.iter().map(|&i| truths[i]).collect();
        Some(weighted_f1(&p, &t, n_classes)?)
    };
    Ok(SubsetEval {
        theta,
        result,
        count: keep.len(),
        fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 1, 2, 0];
        let r = weighted_f1(&t, &t, 3).unwrap();
        assert_eq!((r.accuracy, r.weighted_f1), (1.0, 1.0));
    }

    #[test]
    fn all_wrong_binary() {
        let r = weighted_f1(&[1, 1, 0], &[0, 0, 1], 2).unwrap();
        assert_eq!(r.weighted_f1, 0.0);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn absent_class_scores_zero_not_nan() {
        let r = weighted_f1(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(r.per_class_f1, vec![1.0, 0.0, 0.0]);
        assert_eq!(r.weighted_f1, 1.0);
    }

    #[test]
    fn out_of_range_prediction() {
        assert_eq!(
            weighted_f1(&[3], &[0], 2).unwrap_err(),
            Error::LabelOutOfRange { label: 3, n_classes: 2 }
        );
        // a valid but never-true class is just another column
        let r = weighted_f1(&[2, 0], &[0, 0], 3).unwrap();
        assert_eq!(r.confusion[0], vec![1, 0, 1]);
    }

    #[test]
    fn subset_eval_edges() {
        let p = [0, 1, 1, 0];
        let t = [0, 1, 0, 0];
        let c = [0.99, 0.97, 0.6, 0.96];
        let full = weighted_f1(&p, &t, 2).unwrap();
        let all = high_confidence_subset_eval(&p, &c, &t, 2, 0.0).unwrap();
        assert_eq!(all.result.as_ref(), Some(&full));
        assert_eq!(all.fraction, 1.0);
        let none = high_confidence_subset_eval(&p, &c, &t, 2, 0.99).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.fraction, 0.0);
        let some = high_confidence_subset_eval(&p, &c, &t, 2, 0.95).unwrap();
        assert_eq!(some.count, 3);
        assert_eq!(some.result.unwrap().weighted_f1, 1.0);
    }
}
