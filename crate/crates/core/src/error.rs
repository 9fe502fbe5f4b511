use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("class label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("subject {subject} has no center")]
    MissingCenter { subject: usize },
    #[error("class {class} has {found} subjects, fewer than k = {k}")]
    TooFewSubjects { class: usize, found: usize, k: usize },
    #[error("fold {fold} out of range for k = {k}")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("batch size {batch_size} exceeds {available} available samples")]
    BatchTooLarge { batch_size: usize, available: usize },
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("model count mismatch at sample {sample}: expected {expected}, found {found}")]
    ModelCountMismatch {
        sample: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite gradient in group `{0}`")]
    NonFiniteGradient(&'static str),
    #[error("dataset failed validation with {} violation(s)", .0.len())]
    InvalidDataset(Vec<Violation>),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
