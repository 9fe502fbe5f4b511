//! The heterogeneity loss: softmax cross-entropy plus three center terms.
//!
//! ```text
//! L_H = L_CE + λ1·L_class + λ2·L_subject + λ3·L_subject_class
//! ```
//!
//! * `L_class`   = Σ_c (1/|M_c|) Σ_{x∈M_c} ‖x − c1_c‖²
//! * `L_subject` = Σ_{s: |M_s|>0} (1/|M_s|) Σ_{x∈M_s} ‖x − c2_s‖²
//! * `L_subject_class` sums over ordered pairs of distinct subjects present in
//!   the batch: ‖c2_i − c2_j‖² for same-class pairs, 1/(1 + ‖c2_i − c2_j‖²)
//!   otherwise. Every unordered pair is therefore counted twice.
//!
//! All terms return analytic gradients. Centers are ordinary parameters;
//! centers of classes/subjects missing from the batch get zero gradient.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::dataset::MiniBatch;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::{dot, sq_dist, Matrix};
use crate::seed;

/// Linear classifier head: `logits = W x + b`, `W` is `n_classes × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Head {
            weight: Matrix::zeros(n_classes, dim),
            bias: vec![0.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if self.bias.len() != self.weight.rows() {
            return Err(Error::ShapeMismatch {
                what: "head bias length",
                expected: self.weight.rows(),
                found: self.bias.len(),
            });
        }
        let mut z = features.matmul_t(&self.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// Learnable class centers (`n_classes × d`) and subject centers (`n_subjects × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct CenterStore {
    pub class_centers: Matrix,
    pub subject_centers: Matrix,
}

impl CenterStore {
    pub fn zeros(n_classes: usize, n_subjects: usize, dim: usize) -> Self {
        CenterStore {
            class_centers: Matrix::zeros(n_classes, dim),
            subject_centers: Matrix::zeros(n_subjects, dim),
        }
    }

    /// Seeded standard normal entries scaled by 0.01.
    pub fn init(n_classes: usize, n_subjects: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut store = CenterStore::zeros(n_classes, n_subjects, dim);
        for v in store
            .class_centers
            .as_mut_slice()
            .iter_mut()
            .chain(store.subject_centers.as_mut_slice())
        {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = 0.01 * z;
        }
        store
    }

    pub fn dim(&self) -> usize {
        self.class_centers.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.class_centers.is_finite() && self.subject_centers.is_finite()
    }
}

/// λ1, λ2, λ3.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    /// 0.05, 0.05, 0.005.
    pub const DEFAULT: LossWeights = LossWeights {
        lambda1: 0.05,
        lambda2: 0.05,
        lambda3: 0.005,
    };

    /// Plain cross-entropy.
    pub const CE_ONLY: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };

    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = LossWeights {
            lambda1,
            lambda2,
            lambda3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub value: f64,
    pub grad_features: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

/// A center term and its gradients with respect to the batch features and
/// to the center table it pulls toward.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterTerm {
    pub value: f64,
    pub grad_features: Matrix,
    pub grad_centers: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub value: f64,
    pub grad_centers: Matrix,
}

/// Mean softmax cross-entropy, stabilized by subtracting the max logit.
pub fn cross_entropy(features: &Matrix, labels: &[usize], head: &Head) -> Result<CrossEntropy> {
    let m = features.rows();
    if m == 0 {
        return Err(Error::Empty("batch"));
    }
    if labels.len() != m {
        return Err(Error::ShapeMismatch {
            what: "label count",
            expected: m,
            found: labels.len(),
        });
    }
    if head.dim() != features.cols() {
        return Err(Error::ShapeMismatch {
            what: "feature width",
            expected: head.dim(),
            found: features.cols(),
        });
    }
    let n_classes = head.n_classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange { label, n_classes });
    }

    let logits = head.logits(features)?;
    let inv_m = 1.0 / m as f64;
    let mut value = 0.0;
    let mut grad_logits = Matrix::zeros(m, n_classes);
    for i in 0..m {
        let z = logits.row(i);
        let (top, max) = argmax(z);
        // log Σ exp(z - max) = log1p(Σ_{j≠top} exp(z_j - max))
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != top)
            .map(|(_, &v)| math::exp(v - max))
            .sum();
        let log_norm = math::ln_1p(rest);
        // (max - z_y) first: adding a tiny log_norm to a large max loses it
        value += (max - z[labels[i]]) + log_norm;
        let g = grad_logits.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = math::exp((z[j] - max) - log_norm) * inv_m;
        }
        g[labels[i]] -= inv_m;
    }

    let d = features.cols();
    let mut grad_features = Matrix::zeros(m, d);
    let mut grad_weight = Matrix::zeros(n_classes, d);
    let mut grad_bias = vec![0.0; n_classes];
    for i in 0..m {
        let x = features.row(i);
        for c in 0..n_classes {
            let g = grad_logits[(i, c)];
            grad_bias[c] += g;
            let w = head.weight.row(c);
            let gx = grad_features.row_mut(i);
            for k in 0..d {
                gx[k] += g * w[k];
            }
            let gw = grad_weight.row_mut(c);
            for k in 0..d {
                gw[k] += g * x[k];
            }
        }
    }

    Ok(CrossEntropy {
        value: value * inv_m,
        grad_features,
        grad_weight,
        grad_bias,
    })
}

fn check_features(batch: &MiniBatch, features: &Matrix, centers: &Matrix) -> Result<()> {
    if features.rows() != batch.len() {
        return Err(Error::ShapeMismatch {
            what: "feature rows vs batch size",
            expected: batch.len(),
            found: features.rows(),
        });
    }
    if features.cols() != centers.cols() {
        return Err(Error::ShapeMismatch {
            what: "feature width vs center width",
            expected: centers.cols(),
            found: features.cols(),
        });
    }
    Ok(())
}

/// Σ over groups of the group-mean squared distance to the group's center.
fn grouped_center_term<'a>(
    groups: impl Iterator<Item = (usize, &'a Vec<usize>)>,
    features: &Matrix,
    centers: &Matrix,
    missing: impl Fn(usize) -> Error,
) -> Result<CenterTerm> {
    let d = features.cols();
    let mut value = 0.0;
    let mut grad_features = Matrix::zeros(features.rows(), d);
    let mut grad_centers = Matrix::zeros(centers.rows(), d);
    for (g, rows) in groups {
        if rows.is_empty() {
            continue;
        }
        if g >= centers.rows() {
            return Err(missing(g));
        }
        let inv = 1.0 / rows.len() as f64;
        let center = centers.row(g);
        let mut sum = 0.0;
        for &r in rows {
            let x = features.row(r);
            sum += sq_dist(x, center);
            let gx = grad_features.row_mut(r);
            for k in 0..d {
                gx[k] = 2.0 * inv * (x[k] - center[k]);
            }
            let gc = grad_centers.row_mut(g);
            for k in 0..d {
                gc[k] -= 2.0 * inv * (x[k] - center[k]);
            }
        }
        value += inv * sum;
    }
    Ok(CenterTerm {
        value,
        grad_features,
        grad_centers,
    })
}

/// Class-center term over the class subsets of the batch.
pub fn class_center_loss(batch: &MiniBatch, features: &Matrix, centers: &CenterStore) -> Result<CenterTerm> {
    check_features(batch, features, &centers.class_centers)?;
    grouped_center_term(
        batch.by_class.iter().enumerate(),
        features,
        &centers.class_centers,
        |class| Error::LabelOutOfRange {
            label: class,
            n_classes: centers.class_centers.rows(),
        },
    )
}

/// Subject-center term over the subjects present in the batch.
pub fn subject_center_loss(batch: &MiniBatch, features: &Matrix, centers: &CenterStore) -> Result<CenterTerm> {
    check_features(batch, features, &centers.subject_centers)?;
    grouped_center_term(
        batch.by_subject.iter().map(|(&s, rows)| (s, rows)),
        features,
        &centers.subject_centers,
        |subject| Error::MissingCenter { subject },
    )
}

/// Pairwise subject-center term over ordered pairs of distinct present subjects.
pub fn subject_class_center_loss(
    present_subjects: &[usize],
    centers: &CenterStore,
    subject_class: &[usize],
) -> Result<PairTerm> {
    let table = &centers.subject_centers;
    for &s in present_subjects {
        if s >= table.rows() {
            return Err(Error::MissingCenter { subject: s });
        }
        if s >= subject_class.len() {
            return Err(Error::IndexOutOfRange {
                index: s,
                len: subject_class.len(),
            });
        }
    }
    let d = table.cols();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(table.rows(), d);
    let mut diff = vec![0.0; d];
    for &si in present_subjects {
        for &sj in present_subjects {
            if si == sj {
                continue;
            }
            let (ci, cj) = (table.row(si), table.row(sj));
            for k in 0..d {
                diff[k] = ci[k] - cj[k];
            }
            let dist2 = dot(&diff, &diff);
            // d/dc_i of the pair term; d/dc_j is its negation
            let coef = if subject_class[si] == subject_class[sj] {
                value += dist2;
                2.0
            } else {
                let q = 1.0 + dist2;
                value += 1.0 / q;
                -2.0 / (q * q)
            };
            for k in 0..d {
                grad[(si, k)] += coef * diff[k];
                grad[(sj, k)] -= coef * diff[k];
            }
        }
    }
    Ok(PairTerm {
        value,
        grad_centers: grad,
    })
}

/// Gradients of `L_H` for every parameter group it touches directly.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub features: Matrix,
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
    pub class_centers: Matrix,
    pub subject_centers: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub class_center: f64,
    pub subject_center: f64,
    pub subject_class: f64,
    pub total: f64,
    pub grads: LossGrads,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Evaluates the four terms on one mini-batch and combines them with `weights`.
pub fn heterogeneity_loss(
    batch: &MiniBatch,
    features: &Matrix,
    head: &Head,
    centers: &CenterStore,
    subject_class: &[usize],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let ce = cross_entropy(features, &batch.labels, head)?;
    let class = class_center_loss(batch, features, centers)?;
    let subject = subject_center_loss(batch, features, centers)?;
    let pairs = subject_class_center_loss(&batch.present_subjects(), centers, subject_class)?;

    let LossWeights {
        lambda1,
        lambda2,
        lambda3,
    } = *weights;
    let total = ce.value + lambda1 * class.value + lambda2 * subject.value + lambda3 * pairs.value;

    let mut g_features = ce.grad_features;
    g_features.add_scaled(&class.grad_features, lambda1);
    g_features.add_scaled(&subject.grad_features, lambda2);
    let mut g_class = class.grad_centers;
    g_class.scale(lambda1);
    let mut g_subject = subject.grad_centers;
    g_subject.scale(lambda2);
    g_subject.add_scaled(&pairs.grad_centers, lambda3);

    Ok(LossBreakdown {
        ce: ce.value,
        class_center: class.value,
        subject_center: subject.value,
        subject_class: pairs.value,
        total,
        grads: LossGrads {
            features: g_features,
            head_weight: ce.grad_weight,
            head_bias: ce.grad_bias,
            class_centers: g_class,
            subject_centers: g_subject,
        },
    })
}

/// Index and value of the largest entry; the first one wins ties.
pub(crate) fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{partition_batch, Dataset, Sample};

    fn rows(r: &[&[f64]]) -> Matrix {
        Matrix::from_rows(r).unwrap()
    }

    #[test]
    fn uniform_softmax_is_ln2() {
        let ce = cross_entropy(&rows(&[&[0.3, -1.0]]), &[1], &Head::zeros(2, 2)).unwrap();
        assert!((ce.value - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_softmax() {
        // identity head turns features into logits [20, 0]
        let head = Head {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        };
        let ce = cross_entropy(&rows(&[&[20.0, 0.0]]), &[0], &head).unwrap();
        let expected = 2.061_153_620_314_381_4e-9; // ln(1 + e^-20)
        assert!((ce.value - expected).abs() / expected < 1e-12, "{}", ce.value);
    }

    #[test]
    fn bad_label_rejected() {
        let err = cross_entropy(&rows(&[&[0.0]]), &[2], &Head::zeros(2, 1)).unwrap_err();
        assert_eq!(err, Error::LabelOutOfRange { label: 2, n_classes: 2 });
    }

    fn one_class_batch(n: usize, subject_of: impl Fn(usize) -> usize, n_subjects: usize) -> MiniBatch {
        let samples = (0..n).map(|i| Sample::new(vec![0.0], subject_of(i), 0)).collect();
        let ds = Dataset::new(1, 2, vec![0; n_subjects], samples);
        partition_batch(&ds, &(0..n).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn class_center_sole_member_at_distance_two() {
        let batch = one_class_batch(1, |_| 0, 1);
        let mut centers = CenterStore::zeros(2, 1, 2);
        centers.class_centers.row_mut(0).copy_from_slice(&[1.0, 1.0]);
        let t = class_center_loss(&batch, &rows(&[&[1.0, 3.0]]), &centers).unwrap();
        assert_eq!(t.value, 4.0);
    }

    #[test]
    fn features_on_centers_give_zero() {
        let batch = one_class_batch(3, |i| i % 2, 2);
        let mut centers = CenterStore::zeros(2, 2, 1);
        centers.class_centers[(0, 0)] = 0.5;
        centers.subject_centers[(0, 0)] = 0.5;
        centers.subject_centers[(1, 0)] = 0.5;
        let f = rows(&[&[0.5], &[0.5], &[0.5]]);
        assert_eq!(class_center_loss(&batch, &f, &centers).unwrap().value, 0.0);
        assert_eq!(subject_center_loss(&batch, &f, &centers).unwrap().value, 0.0);
    }

    #[test]
    fn subject_center_direct_mean() {
        let batch = one_class_batch(2, |_| 0, 1);
        let centers = CenterStore::zeros(2, 1, 1);
        let t = subject_center_loss(&batch, &rows(&[&[1.0], &[-3.0]]), &centers).unwrap();
        assert_eq!(t.value, 5.0);
    }

    #[test]
    fn subject_center_dimension_mismatch() {
        let batch = one_class_batch(1, |_| 0, 1);
        let centers = CenterStore::zeros(2, 1, 3);
        assert!(matches!(
            subject_center_loss(&batch, &rows(&[&[1.0]]), &centers),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn pair_term_identical_centers() {
        let centers = CenterStore::zeros(2, 2, 3);
        let same = subject_class_center_loss(&[0, 1], &centers, &[0, 0]).unwrap();
        assert_eq!(same.value, 0.0);
        let diff = subject_class_center_loss(&[0, 1], &centers, &[0, 1]).unwrap();
        assert_eq!(diff.value, 2.0);
        assert!(matches!(
            subject_class_center_loss(&[0, 5], &centers, &[0, 1]),
            Err(Error::MissingCenter { subject: 5 })
        ));
    }

    #[test]
    fn composition_example() {
        // (ce, class, subject, pair) = (0.7, 2.0, 1.0, 2.0) with the default weights
        let w = LossWeights::DEFAULT;
        let total = 0.7 + w.lambda1 * 2.0 + w.lambda2 * 1.0 + w.lambda3 * 2.0;
        assert!((total - 0.86).abs() < 1e-15);
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(LossWeights::new(0.1, -1.0, 0.0).is_err());
    }
}
