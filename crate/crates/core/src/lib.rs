//! Subject-aware training primitives for heterogeneous biomedical data.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! core: dataset types, subject-disjoint fold construction, the heterogeneity
//! loss with analytic gradients, a small feed-forward classifier with Adam,
//! a seeded synthetic data generator, the thresholded ensemble rule and
//! support-weighted F1. File formats and the command-line tool live in the
//! `hetloss` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod ensemble;
mod error;
pub mod gradcheck;
pub mod loss;
mod math;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod seed;
pub mod synth;
pub mod train;

pub use dataset::{partition_batch, validate_dataset, Dataset, MiniBatch, Sample, Violation};
pub use ensemble::{
    batch_decide, decide, harmonic_mean_probs, BatchDecisions, Decision, EnsembleConfig,
    ModelConfidences, Rule,
};
pub use error::{Error, Result};
pub use gradcheck::{finite_difference_check, FdOptions, FdReport, GroupReport, ParamGroup};
pub use loss::{
    class_center_loss, cross_entropy, heterogeneity_loss, subject_center_loss,
    subject_class_center_loss, CenterStore, Head, LossBreakdown, LossGrads, LossWeights,
};
pub use matrix::Matrix;
pub use metrics::{high_confidence_subset_eval, weighted_f1, EvalResult, SubsetEval};
pub use model::{Activation, Dense, ForwardOutput, ModelParams, ModelShape};
pub use optim::{AdamConfig, OptimState};
pub use sampler::{fold_train_val, minibatch_iter, stratified_subject_folds, FoldPlan};
pub use synth::{generate, GenConfig, Generated, GroundTruth};
pub use train::{predict_proba, train_two_stage, Checkpoint, EpochLog, TrainConfig, TrainOutcome};
