#![allow(dead_code)]

use hetloss_core::seed::{self, Rng};
use hetloss_core::{
    heterogeneity_loss, partition_batch, CenterStore, Dataset, Head, LossWeights, Matrix, MiniBatch,
    ParamGroup, Sample,
};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A small dataset with random features where subject `s` has class
/// `subject_class[s]`, and a batch covering all of it.
pub fn random_batch(
    rng: &mut Rng,
    m: usize,
    d: usize,
    subject_class: &[usize],
    n_classes: usize,
) -> (Dataset, MiniBatch, Matrix) {
    let n_s = subject_class.len();
    let mut samples = Vec::with_capacity(m);
    for i in 0..m {
        // every subject appears at least once when m >= n_s
        let s = if i < n_s { i } else { rng.random_range(0..n_s) };
        let f: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        samples.push(Sample::new(f, s, subject_class[s]));
    }
    let ds = Dataset::new(d, n_classes, subject_class.to_vec(), samples);
    let idx: Vec<usize> = (0..m).collect();
    let batch = partition_batch(&ds, &idx).unwrap();
    let features = ds.feature_matrix(&idx).unwrap();
    (ds, batch, features)
}

pub fn random_head(rng: &mut Rng, n_classes: usize, d: usize) -> Head {
    Head {
        weight: random_matrix(rng, n_classes, d, 0.5),
        bias: (0..n_classes).map(|_| 0.1 * normal(rng)).collect(),
    }
}

pub fn random_centers(rng: &mut Rng, n_classes: usize, n_subjects: usize, d: usize) -> CenterStore {
    CenterStore {
        class_centers: random_matrix(rng, n_classes, d, 0.7),
        subject_centers: random_matrix(rng, n_subjects, d, 0.7),
    }
}

pub fn rng(seed_value: u64) -> Rng {
    seed::rng(seed_value)
}

/// Parameter groups of `L_H` in the order features, W, b, class centers,
/// subject centers, with the analytic gradients from the loss module.
pub fn loss_groups(
    batch: &MiniBatch,
    features: &Matrix,
    head: &Head,
    centers: &CenterStore,
    subject_class: &[usize],
    weights: &LossWeights,
) -> Vec<ParamGroup> {
    let l = heterogeneity_loss(batch, features, head, centers, subject_class, weights).unwrap();
    vec![
        ParamGroup::new("features", features.as_slice().to_vec(), l.grads.features.as_slice().to_vec()),
        ParamGroup::new("head.weight", head.weight.as_slice().to_vec(), l.grads.head_weight.as_slice().to_vec()),
        ParamGroup::new("head.bias", head.bias.clone(), l.grads.head_bias.clone()),
        ParamGroup::new(
            "class_centers",
            centers.class_centers.as_slice().to_vec(),
            l.grads.class_centers.as_slice().to_vec(),
        ),
        ParamGroup::new(
            "subject_centers",
            centers.subject_centers.as_slice().to_vec(),
            l.grads.subject_centers.as_slice().to_vec(),
        ),
    ]
}

/// Rebuilds the loss inputs from perturbed groups and evaluates `L_H`.
pub fn eval_loss_groups(
    groups: &[ParamGroup],
    batch: &MiniBatch,
    shape: (usize, usize, usize, usize),
    subject_class: &[usize],
    weights: &LossWeights,
) -> f64 {
    let (m, d, n_c, n_s) = shape;
    let features = Matrix::from_vec(m, d, groups[0].values.clone()).unwrap();
    let head = Head {
        weight: Matrix::from_vec(n_c, d, groups[1].values.clone()).unwrap(),
        bias: groups[2].values.clone(),
    };
    let centers = CenterStore {
        class_centers: Matrix::from_vec(n_c, d, groups[3].values.clone()).unwrap(),
        subject_centers: Matrix::from_vec(n_s, d, groups[4].values.clone()).unwrap(),
    };
    heterogeneity_loss(batch, &features, &head, &centers, subject_class, weights)
        .unwrap()
        .total
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
