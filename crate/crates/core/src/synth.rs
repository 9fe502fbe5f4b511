//! Seeded generator of subject-heterogeneous datasets.
//!
//! A sample of subject `s` with class `c` is `mean[c] + offset[s] + noise`:
//! the per-subject offset is the inter-subject bias a classifier can latch
//! onto, the per-sample noise is the intra-subject variation. Subject sizes
//! follow a truncated power law and class totals can be skewed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct GenConfig {
    pub dim: usize,
    pub n_classes: usize,
    pub subjects_per_class: Vec<usize>,
    /// Distance between any two class means.
    pub class_separation: f64,
    /// Std of each subject's offset vector, per coordinate.
    pub subject_bias_scale: f64,
    /// Std of per-sample noise, per coordinate.
    pub noise_scale: f64,
    /// Images per subject have density ∝ n^(−exponent) on `[min_images, max_images]`.
    pub power_law_exponent: f64,
    pub min_images: usize,
    pub max_images: usize,
    /// Target ratio of class-0 images to the images of every other class.
    /// `None` keeps the raw power-law draws.
    pub class_imbalance_ratio: Option<f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::paper_analog(0)
    }
}

impl GenConfig {
    /// The benchmark preset used throughout the tests and the CLI defaults.
    pub fn paper_analog(seed: u64) -> Self {
        GenConfig {
            dim: 16,
            n_classes: 2,
            subjects_per_class: vec![14, 14],
            class_separation: 2.0,
            subject_bias_scale: 1.5,
            noise_scale: 1.0,
            power_law_exponent: 1.5,
            min_images: 20,
            max_images: 400,
            class_imbalance_ratio: Some(2.1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "need at least 2 classes"));
        }
        if self.dim < self.n_classes {
            return Err(Error::config("dim", "must be at least n_classes"));
        }
        if self.subjects_per_class.len() != self.n_classes {
            return Err(Error::config(
                "subjects_per_class",
                format!("expected {} entries, found {}", self.n_classes, self.subjects_per_class.len()),
            ));
        }
        if self.subjects_per_class.contains(&0) {
            return Err(Error::config("subjects_per_class", "every class needs a subject"));
        }
        for (field, v) in [
            ("class_separation", self.class_separation),
            ("subject_bias_scale", self.subject_bias_scale),
            ("noise_scale", self.noise_scale),
            ("power_law_exponent", self.power_law_exponent),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        if self.min_images == 0 {
            return Err(Error::config("min_images", "must be at least 1"));
        }
        if self.min_images > self.max_images {
            return Err(Error::config("max_images", "must be at least min_images"));
        }
        if let Some(r) = self.class_imbalance_ratio {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::config("class_imbalance_ratio", "must be finite and positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub class_means: Matrix,
    pub subject_offsets: Matrix,
    pub subject_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

pub fn generate(config: &GenConfig) -> Result<Generated> {
    config.validate()?;
    let means = class_means(config);
    generate_subjects(config, &config.subjects_per_class, means, "train")
}

/// Fresh subjects drawn around the same class means as [`generate`] with the
/// same config, for evaluation on subjects no fold has seen.
pub fn generate_holdout(config: &GenConfig, subjects_per_class: &[usize]) -> Result<Generated> {
    config.validate()?;
    if subjects_per_class.len() != config.n_classes || subjects_per_class.contains(&0) {
        return Err(Error::config(
            "holdout_subjects_per_class",
            format!("need {} positive entries", config.n_classes),
        ));
    }
    let means = class_means(config);
    generate_subjects(config, subjects_per_class, means, "holdout")
}

/// Class means on a scaled simplex, centered at the origin.
fn class_means(config: &GenConfig) -> Matrix {
    let a = config.class_separation / core::f64::consts::SQRT_2;
    let mut means = Matrix::zeros(config.n_classes, config.dim);
    let centroid = a / config.n_classes as f64;
    for c in 0..config.n_classes {
        for k in 0..config.n_classes {
            means[(c, k)] = if c == k { a - centroid } else { -centroid };
        }
    }
    means
}

fn generate_subjects(
    config: &GenConfig,
    subjects_per_class: &[usize],
    class_means: Matrix,
    stream: &str,
) -> Result<Generated> {
    let mut count_rng = seed::rng(seed::subseed(config.seed, stream, 0));
    let mut offset_rng = seed::rng(seed::subseed(config.seed, stream, 1));
    let mut noise_rng = seed::rng(seed::subseed(config.seed, stream, 2));

    let mut counts_by_class: Vec<Vec<usize>> = subjects_per_class
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| {
                    draw_power_law_count(
                        &mut count_rng,
                        config.power_law_exponent,
                        config.min_images,
                        config.max_images,
                    )
                })
                .collect()
        })
        .collect();
    if let Some(ratio) = config.class_imbalance_ratio {
        rebalance_majority(&mut counts_by_class, ratio, config.min_images, config.max_images)?;
    }

    let n_subjects: usize = subjects_per_class.iter().sum();
    let d = config.dim;
    let mut subject_class = Vec::with_capacity(n_subjects);
    let mut subject_counts = Vec::with_capacity(n_subjects);
    let mut offsets = Matrix::zeros(n_subjects, d);
    let mut samples = Vec::new();
    for (class, counts) in counts_by_class.iter().enumerate() {
        for &count in counts {
            let s = subject_class.len();
            subject_class.push(class);
            subject_counts.push(count);
            for v in offsets.row_mut(s) {
                let z: f64 = StandardNormal.sample(&mut offset_rng);
                *v = config.subject_bias_scale * z;
            }
            for _ in 0..count {
                let features: Vec<f64> = (0..d)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(&mut noise_rng);
                        class_means[(class, k)] + offsets[(s, k)] + config.noise_scale * z
                    })
                    .collect();
                samples.push(Sample::new(features, s, class));
            }
        }
    }

    Ok(Generated {
        dataset: Dataset::new(d, config.n_classes, subject_class, samples),
        truth: GroundTruth {
            class_means,
            subject_offsets: offsets,
            subject_counts,
        },
    })
}

/// Inverse-CDF draw from the continuous power law on `[min, max + 1)`,
/// floored to an integer count.
pub fn draw_power_law_count(rng: &mut Rng, exponent: f64, min: usize, max: usize) -> usize {
    let lo = min as f64;
    let hi = (max + 1) as f64;
    let u: f64 = rng.random();
    let x = if (exponent - 1.0).abs() < 1e-12 {
        lo * math::exp(u * math::ln(hi / lo))
    } else {
        let e = 1.0 - exponent;
        let (a, b) = (math::powf(lo, e), math::powf(hi, e));
        math::powf(a + u * (b - a), 1.0 / e)
    };
    (math::floor(x) as usize).clamp(min, max)
}

/// Rescales class-0 subject counts so that class 0 holds `ratio` times the
/// mean image count of the other classes.
fn rebalance_majority(counts: &mut [Vec<usize>], ratio: f64, min: usize, max: usize) -> Result<()> {
    let others: Vec<usize> = counts[1..].iter().map(|c| c.iter().sum()).collect();
    let target = ratio * others.iter().sum::<usize>() as f64 / others.len() as f64;
    let base = counts[0].clone();
    let n0 = base.len();
    let (lo_total, hi_total) = ((n0 * min) as f64, (n0 * max) as f64);
    if hi_total < target * 0.9 || lo_total > target * 1.1 {
        return Err(Error::config(
            "class_imbalance_ratio",
            format!(
                "class 0 needs about {target:.0} images but its {n0} subjects allow {}..={}",
                n0 * min,
                n0 * max
            ),
        ));
    }
    let scaled = |s: f64| -> Vec<usize> {
        base.iter()
            .map(|&n| (math::floor(n as f64 * s + 0.5) as usize).clamp(min, max))
            .collect()
    };
    let total = |v: &[usize]| v.iter().sum::<usize>() as f64;
    let (mut lo, mut hi) = (0.0, max as f64 / min as f64 + 1.0);
    let mut best = base.clone();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let cand = scaled(mid);
        let t = total(&cand);
        if (t - target).abs() < (total(&best) - target).abs() {
            best = cand;
        }
        if t < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (total(&best) - target).abs() > 0.1 * target {
        return Err(Error::config("class_imbalance_ratio", "count bounds cannot meet the ratio"));
    }
    counts[0] = best;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::validate_dataset;

    #[test]
    fn no_bias_no_noise_gives_class_means() {
        let mut cfg = GenConfig::paper_analog(3);
        cfg.subject_bias_scale = 0.0;
        cfg.noise_scale = 0.0;
        let g = generate(&cfg).unwrap();
        for s in g.dataset.samples() {
            assert_eq!(s.features.as_slice(), g.truth.class_means.row(s.class));
        }
        let d01: f64 = g
            .truth
            .class_means
            .row(0)
            .iter()
            .zip(g.truth.class_means.row(1))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!((d01.sqrt() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn preset_is_valid_and_deterministic() {
        let a = generate(&GenConfig::paper_analog(11)).unwrap();
        let b = generate(&GenConfig::paper_analog(11)).unwrap();
        assert_eq!(a, b);
        assert!(validate_dataset(&a.dataset).is_empty());
        assert_eq!(a.dataset.n_subjects(), 28);
        let counts = a.dataset.class_counts();
        let ratio = counts[0] as f64 / counts[1] as f64;
        assert!((ratio / 2.1 - 1.0).abs() <= 0.1, "{ratio}");
        assert!(a.truth.subject_counts.iter().all(|&n| (20..=400).contains(&n)));
        assert_ne!(a, generate(&GenConfig::paper_analog(12)).unwrap());
    }

    #[test]
    fn infeasible_counts_rejected() {
        let mut cfg = GenConfig::paper_analog(0);
        cfg.min_images = 10;
        cfg.max_images = 12;
        match generate(&cfg) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "class_imbalance_ratio"),
            other => panic!("{other:?}"),
        }
        cfg.min_images = 50;
        cfg.max_images = 40;
        assert!(matches!(
            generate(&cfg),
            Err(Error::InvalidConfig { field: "max_images", .. })
        ));
    }

    #[test]
    fn holdout_shares_class_means() {
        let cfg = GenConfig::paper_analog(5);
        let train = generate(&cfg).unwrap();
        let test = generate_holdout(&cfg, &[3, 2]).unwrap();
        assert_eq!(train.truth.class_means, test.truth.class_means);
        assert_eq!(test.dataset.n_subjects(), 5);
        assert_ne!(train.truth.subject_offsets.row(0), test.truth.subject_offsets.row(0));
    }
}
