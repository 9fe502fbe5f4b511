//! Subject-disjoint, class-stratified k-fold construction and seeded
//! mini-batch iteration.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::dataset::{partition_batch, Dataset, MiniBatch};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_TOLERANCE_RATIO: f64 = 1.2;

/// Assignment of every subject to one of `k` folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub tolerance_ratio: f64,
    /// `assignment[subject]` is the fold holding all of that subject's samples.
    pub assignment: Vec<usize>,
    /// `per_fold_counts[fold][class]` is the number of samples.
    pub per_fold_counts: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn n_classes(&self) -> usize {
        self.per_fold_counts.first().map_or(0, Vec::len)
    }

    /// Subjects of one fold, ascending.
    pub fn fold_subjects(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f == fold)
            .map(|(s, _)| s)
            .collect()
    }

    /// max/min fold image count for one class; infinite when a fold is empty.
    pub fn class_ratio(&self, class: usize) -> f64 {
        let counts = self.per_fold_counts.iter().map(|f| f[class]);
        let max = counts.clone().max().unwrap_or(0);
        let min = counts.min().unwrap_or(0);
        if min == 0 {
            if max == 0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            max as f64 / min as f64
        }
    }

    /// Worst per-class ratio.
    pub fn achieved_ratio(&self) -> f64 {
        (0..self.n_classes())
            .map(|c| self.class_ratio(c))
            .fold(1.0, f64::max)
    }

    pub fn within_tolerance(&self) -> bool {
        self.achieved_ratio() <= self.tolerance_ratio
    }
}

/// Greedy largest-first assignment of subjects to folds, class by class,
/// followed by local refinement.
///
/// Within a class, subjects are ordered by image count (descending, ties by
/// id, then shuffled within each equal-count run using `seed`) and each goes
/// to the fold currently holding the fewest images of that class (ties to the
/// lowest fold). The result is then improved by single-subject moves and
/// pairwise swaps, and the same is repeated from [`RESTARTS`] seeded random
/// orders; the most balanced plan per class wins, so the output is never worse
/// than plain greedy. A plan that misses `tolerance_ratio` is still returned;
/// check [`FoldPlan::within_tolerance`].
pub fn stratified_subject_folds(
    ds: &Dataset,
    k: usize,
    seed: u64,
    tolerance_ratio: f64,
) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::config("k", "must be positive"));
    }
    if !tolerance_ratio.is_finite() || tolerance_ratio < 1.0 {
        return Err(Error::config("tolerance_ratio", "must be a finite value >= 1"));
    }
    let counts = ds.subject_counts();
    let n_classes = ds.n_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (s, &c) in ds.subject_class().iter().enumerate() {
        if c < n_classes {
            by_class[c].push(s);
        }
    }
    for (class, subjects) in by_class.iter().enumerate() {
        if subjects.len() < k {
            return Err(Error::TooFewSubjects {
                class,
                found: subjects.len(),
                k,
            });
        }
    }

    let mut rng = seed::rng(seed::subseed(seed, "folds", 0));
    let mut assignment = vec![usize::MAX; ds.n_subjects()];
    let mut per_fold_counts = vec![vec![0usize; n_classes]; k];
    for (class, mut subjects) in by_class.into_iter().enumerate() {
        subjects.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut start = 0;
        while start < subjects.len() {
            let run = counts[subjects[start]];
            let end = start + subjects[start..].iter().take_while(|&&s| counts[s] == run).count();
            subjects[start..end].shuffle(&mut rng);
            start = end;
        }
        let sizes: Vec<usize> = subjects.iter().map(|&s| counts[s]).collect();
        let mut best = refine(greedy(&sizes, k), &sizes, k);
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        for _ in 0..RESTARTS {
            order.shuffle(&mut rng);
            let shuffled: Vec<usize> = order.iter().map(|&i| sizes[i]).collect();
            let cand = refine(greedy(&shuffled, k), &shuffled, k);
            let mut folds = vec![0; sizes.len()];
            for (pos, &i) in order.iter().enumerate() {
                folds[i] = cand[pos];
            }
            if spread(&loads(&folds, &sizes, k)) < spread(&loads(&best, &sizes, k)) {
                best = folds;
            }
        }
        for (pos, &s) in subjects.iter().enumerate() {
            assignment[s] = best[pos];
            per_fold_counts[best[pos]][class] += counts[s];
        }
    }

    Ok(FoldPlan {
        k,
        seed,
        tolerance_ratio,
        assignment,
        per_fold_counts,
    })
}

/// Randomized restarts per class after the largest-first pass.
pub const RESTARTS: usize = 32;

/// Each item in turn goes to the least-loaded fold, lowest index on ties.
fn greedy(sizes: &[usize], k: usize) -> Vec<usize> {
    let mut load = vec![0usize; k];
    sizes
        .iter()
        .map(|&n| {
            // min_by_key returns the first minimum
            let f = (0..k).min_by_key(|&f| load[f]).unwrap();
            load[f] += n;
            f
        })
        .collect()
}

fn loads(folds: &[usize], sizes: &[usize], k: usize) -> Vec<usize> {
    let mut load = vec![0usize; k];
    for (&f, &n) in folds.iter().zip(sizes) {
        load[f] += n;
    }
    load
}

/// max/min ratio (infinite with an empty fold), then sum of squares.
fn spread(load: &[usize]) -> (f64, u128) {
    let max = *load.iter().max().unwrap();
    let min = *load.iter().min().unwrap();
    let ratio = if min == 0 { f64::INFINITY } else { max as f64 / min as f64 };
    (ratio, load.iter().map(|&l| (l as u128) * (l as u128)).sum())
}

/// Applies improving moves and swaps until none is left.
fn refine(mut folds: Vec<usize>, sizes: &[usize], k: usize) -> Vec<usize> {
    let n = sizes.len();
    let mut load = loads(&folds, sizes, k);
    let mut current = spread(&load);
    loop {
        let mut improved = false;
        for a in 0..n {
            for f in 0..k {
                let from = folds[a];
                if f == from {
                    continue;
                }
                load[from] -= sizes[a];
                load[f] += sizes[a];
                let cand = spread(&load);
                if cand < current {
                    folds[a] = f;
                    current = cand;
                    improved = true;
                } else {
                    load[f] -= sizes[a];
                    load[from] += sizes[a];
                }
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                let (fa, fb) = (folds[a], folds[b]);
                if fa == fb || sizes[a] == sizes[b] {
                    continue;
                }
                load[fa] = load[fa] - sizes[a] + sizes[b];
                load[fb] = load[fb] - sizes[b] + sizes[a];
                let cand = spread(&load);
                if cand < current {
                    folds.swap(a, b);
                    current = cand;
                    improved = true;
                } else {
                    load[fa] = load[fa] - sizes[b] + sizes[a];
                    load[fb] = load[fb] - sizes[a] + sizes[b];
                }
            }
        }
        if !improved {
            return folds;
        }
    }
}

/// Sample indices of the training and validation sides of one fold.
pub fn fold_train_val(plan: &FoldPlan, ds: &Dataset, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if fold >= plan.k {
        return Err(Error::FoldOutOfRange { fold, k: plan.k });
    }
    if plan.assignment.len() != ds.n_subjects() {
        return Err(Error::ShapeMismatch {
            what: "fold plan subject count",
            expected: ds.n_subjects(),
            found: plan.assignment.len(),
        });
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in ds.samples().iter().enumerate() {
        if plan.assignment[s.subject] == fold {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, val))
}

/// Mini-batches of one epoch, in order.
#[derive(Debug, Clone)]
pub struct MiniBatches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for MiniBatches<'_> {
    type Item = MiniBatch;

    fn next(&mut self) -> Option<MiniBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = partition_batch(self.ds, &self.order[self.pos..end])
            .expect("indices validated when the iterator was built");
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for MiniBatches<'_> {}

/// Shuffles `indices` with a stream keyed by `(seed, epoch)` and cuts it into
/// batches of `batch_size`; the last batch may be short.
pub fn minibatch_iter<'a>(
    ds: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<MiniBatches<'a>> {
    if indices.is_empty() {
        return Err(Error::Empty("index set"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    if batch_size > indices.len() {
        return Err(Error::BatchTooLarge {
            batch_size,
            available: indices.len(),
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: ds.len(),
        });
    }
    let mut order = indices.to_vec();
    let mut rng = seed::rng(seed::subseed(seed, "epoch", epoch));
    order.shuffle(&mut rng);
    Ok(MiniBatches {
        ds,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;

    /// Dataset where subject `s` has `counts[s]` samples of `classes[s]`.
    fn with_counts(counts: &[usize], classes: &[usize], n_classes: usize) -> Dataset {
        let mut samples = Vec::new();
        for (s, (&n, &c)) in counts.iter().zip(classes).enumerate() {
            for _ in 0..n {
                samples.push(Sample::new(vec![0.0], s, c));
            }
        }
        Dataset::new(1, n_classes, classes.to_vec(), samples)
    }

    #[test]
    fn two_folds_equal_subjects_balance_perfectly() {
        let ds = with_counts(&[5, 5, 7, 7], &[0, 0, 1, 1], 2);
        let plan = stratified_subject_folds(&ds, 2, 3, DEFAULT_TOLERANCE_RATIO).unwrap();
        assert_eq!(plan.achieved_ratio(), 1.0);
        assert_eq!(plan.per_fold_counts, vec![vec![5, 7], vec![5, 7]]);
        assert!(plan.within_tolerance());
    }

    #[test]
    fn too_few_subjects_names_class() {
        let ds = with_counts(&[5, 5, 5, 7], &[0, 0, 0, 1], 2);
        let err = stratified_subject_folds(&ds, 2, 0, 1.2).unwrap_err();
        assert_eq!(err, Error::TooFewSubjects { class: 1, found: 1, k: 2 });
    }

    #[test]
    fn unattainable_tolerance_flagged() {
        let ds = with_counts(&[100, 1, 1, 1, 1, 1], &[0, 0, 0, 1, 1, 1], 2);
        let plan = stratified_subject_folds(&ds, 3, 0, 1.2).unwrap();
        assert!(!plan.within_tolerance());
        assert_eq!(plan.class_ratio(0), 100.0);
        assert_eq!(plan.class_ratio(1), 1.0);
    }

    #[test]
    fn fold_zero_validation_is_its_subjects() {
        let ds = with_counts(&[3, 2, 4, 1], &[0, 0, 1, 1], 2);
        let plan = stratified_subject_folds(&ds, 2, 9, 1.2).unwrap();
        let (train, val) = fold_train_val(&plan, &ds, 0).unwrap();
        let subjects = plan.fold_subjects(0);
        let expected: Vec<usize> = (0..ds.len())
            .filter(|&i| subjects.contains(&ds.sample(i).subject))
            .collect();
        assert_eq!(val, expected);
        assert_eq!(train.len() + val.len(), ds.len());
        assert_eq!(
            fold_train_val(&plan, &ds, 2).unwrap_err(),
            Error::FoldOutOfRange { fold: 2, k: 2 }
        );
    }

    #[test]
    fn batches_of_33() {
        let ds = with_counts(&[20, 13], &[0, 1], 2);
        let idx: Vec<usize> = (0..33).collect();
        let sizes: Vec<usize> = minibatch_iter(&ds, &idx, 16, 1, 0)
            .unwrap()
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![16, 16, 1]);
    }

    #[test]
    fn minibatch_errors() {
        let ds = with_counts(&[2, 2], &[0, 1], 2);
        assert_eq!(minibatch_iter(&ds, &[], 1, 0, 0).unwrap_err(), Error::Empty("index set"));
        assert!(matches!(
            minibatch_iter(&ds, &[0, 1], 3, 0, 0).unwrap_err(),
            Error::BatchTooLarge { .. }
        ));
        assert!(matches!(
            minibatch_iter(&ds, &[0, 10], 1, 0, 0).unwrap_err(),
            Error::IndexOutOfRange { index: 10, .. }
        ));
    }
}
