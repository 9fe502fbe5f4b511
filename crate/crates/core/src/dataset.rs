//! Samples, datasets and mini-batch partitioning.
//!
//! Class and subject ids are dense integers (`0..n_classes`, `0..n_subjects`).
//! Every subject carries exactly one diagnosis, so the class of a sample is
//! fully determined by its subject through [`Dataset::subject_class`].

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub subject: usize,
    pub class: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, subject: usize, class: usize) -> Self {
        Sample {
            features,
            subject,
            class,
        }
    }
}

/// A labelled collection of samples. Immutable once built.
///
/// `Dataset::new` does not check invariants so that malformed inputs can be
/// inspected with [`validate_dataset`]; use [`Dataset::try_new`] to reject them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    n_classes: usize,
    subject_class: Vec<usize>,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(dim: usize, n_classes: usize, subject_class: Vec<usize>, samples: Vec<Sample>) -> Self {
        Dataset {
            dim,
            n_classes,
            subject_class,
            samples,
        }
    }

    pub fn try_new(
        dim: usize,
        n_classes: usize,
        subject_class: Vec<usize>,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let ds = Dataset::new(dim, n_classes, subject_class, samples);
        let violations = validate_dataset(&ds);
        if violations.is_empty() {
            Ok(ds)
        } else {
            Err(Error::InvalidDataset(violations))
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_class.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// The subject → class map.
    pub fn subject_class(&self) -> &[usize] {
        &self.subject_class
    }

    /// Number of samples per subject.
    pub fn subject_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_subjects()];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.subject) {
                *c += 1;
            }
        }
        counts
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.class) {
                *c += 1;
            }
        }
        counts
    }

    /// Stacks the features of the given samples into a row-major matrix.
    pub fn feature_matrix(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            let s = self.samples.get(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.samples.len(),
            })?;
            data.extend_from_slice(&s.features);
        }
        Matrix::from_vec(indices.len(), self.dim, data)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].class).collect()
    }
}

/// One broken dataset invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewClasses { n_classes: usize },
    FeatureDim { sample: usize, expected: usize, found: usize },
    NonFinite { sample: usize, coord: usize },
    SubjectOutOfRange { sample: usize, subject: usize },
    ClassOutOfRange { sample: usize, class: usize },
    SubjectClassOutOfRange { subject: usize, class: usize },
    /// Samples of `subject` whose class differs from the subject's diagnosis.
    SubjectClassConflict { subject: usize, expected: usize, samples: Vec<usize> },
    ClassWithoutSubject { class: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewClasses { n_classes } => {
                write!(f, "dataset declares {n_classes} classes, need at least 2")
            }
            Violation::FeatureDim { sample, expected, found } => {
                write!(f, "sample {sample}: feature dimension {found}, expected {expected}")
            }
            Violation::NonFinite { sample, coord } => {
                write!(f, "sample {sample}: non-finite feature at coordinate {coord}")
            }
            Violation::SubjectOutOfRange { sample, subject } => {
                write!(f, "sample {sample}: subject id {subject} out of range")
            }
            Violation::ClassOutOfRange { sample, class } => {
                write!(f, "sample {sample}: class id {class} out of range")
            }
            Violation::SubjectClassOutOfRange { subject, class } => {
                write!(f, "subject {subject}: mapped to class {class}, out of range")
            }
            Violation::SubjectClassConflict { subject, expected, samples } => write!(
                f,
                "subject {subject}: {} sample(s) disagree with its class {expected}",
                samples.len()
            ),
            Violation::ClassWithoutSubject { class } => {
                write!(f, "class {class} has no subject")
            }
        }
    }
}

/// Lists every broken invariant; an empty report means the dataset is usable.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if ds.n_classes < 2 {
        out.push(Violation::TooFewClasses {
            n_classes: ds.n_classes,
        });
    }
    for (subject, &class) in ds.subject_class.iter().enumerate() {
        if class >= ds.n_classes {
            out.push(Violation::SubjectClassOutOfRange { subject, class });
        }
    }

    let mut conflicts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if s.features.len() != ds.dim {
            out.push(Violation::FeatureDim {
                sample: i,
                expected: ds.dim,
                found: s.features.len(),
            });
        }
        if let Some(coord) = s.features.iter().position(|v| !v.is_finite()) {
            out.push(Violation::NonFinite { sample: i, coord });
        }
        if s.class >= ds.n_classes {
            out.push(Violation::ClassOutOfRange {
                sample: i,
                class: s.class,
            });
        }
        match ds.subject_class.get(s.subject) {
            None => out.push(Violation::SubjectOutOfRange {
                sample: i,
                subject: s.subject,
            }),
            Some(&c) if c != s.class => conflicts.entry(s.subject).or_default().push(i),
            Some(_) => {}
        }
    }
    for (subject, samples) in conflicts {
        out.push(Violation::SubjectClassConflict {
            subject,
            expected: ds.subject_class[subject],
            samples,
        });
    }

    for class in 0..ds.n_classes {
        if !ds.subject_class.contains(&class) {
            out.push(Violation::ClassWithoutSubject { class });
        }
    }
    out
}

/// A mini-batch with its class-level and subject-level subsets.
///
/// Subsets hold *positions within the batch* (row numbers of the batch feature
/// matrix), in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub subjects: Vec<usize>,
    /// `by_class[c]` is `M_c`; empty for classes absent from the batch.
    pub by_class: Vec<Vec<usize>>,
    /// `M_s` for every subject present in the batch, keyed by subject id.
    pub by_subject: BTreeMap<usize, Vec<usize>>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Subjects with `|M_s| > 0`, ascending.
    pub fn present_subjects(&self) -> Vec<usize> {
        self.by_subject.keys().copied().collect()
    }
}

pub fn partition_batch(ds: &Dataset, indices: &[usize]) -> Result<MiniBatch> {
    let mut by_class = vec![Vec::new(); ds.n_classes];
    let mut by_subject: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut labels = Vec::with_capacity(indices.len());
    let mut subjects = Vec::with_capacity(indices.len());
    for (pos, &i) in indices.iter().enumerate() {
        let s = ds.samples.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: ds.samples.len(),
        })?;
        by_class
            .get_mut(s.class)
            .ok_or(Error::LabelOutOfRange {
                label: s.class,
                n_classes: ds.n_classes,
            })?
            .push(pos);
        by_subject.entry(s.subject).or_default().push(pos);
        labels.push(s.class);
        subjects.push(s.subject);
    }
    Ok(MiniBatch {
        indices: indices.to_vec(),
        labels,
        subjects,
        by_class,
        by_subject,
    })
}
