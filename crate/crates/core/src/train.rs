//! Two-stage training and multi-view prediction.
//!
//! Stage 1 trains at `stage1_lr` until the validation weighted-F1 has not
//! improved for `patience` epochs. Stage 2 restarts from the best stage-1
//! checkpoint at `stage2_lr` with a fresh optimizer state. The best checkpoint
//! over both stages is returned. Model weights and centers share one Adam
//! state.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{argmax, CenterStore, LossWeights};
use crate::matrix::Matrix;
use crate::metrics::weighted_f1;
use crate::model::{backward, Activation, ModelParams, ModelShape};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, OptimState};
use crate::sampler::minibatch_iter;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub stage1_max_epochs: usize,
    pub stage2_max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_lr: 1e-3,
            stage2_lr: 1e-5,
            batch_size: 16,
            weights: LossWeights::DEFAULT,
            stage1_max_epochs: 40,
            stage2_max_epochs: 10,
            patience: 10,
            seed: 0,
            clip_norm: 10.0,
            adam: AdamConfig::default(),
            hidden: alloc::vec![32, 32],
            feature_dim: 16,
            activation: Activation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, lr) in [("stage1_lr", self.stage1_lr), ("stage2_lr", self.stage2_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(field, "must be finite and positive"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if self.stage1_max_epochs == 0 {
            return Err(Error::config("stage1_max_epochs", "must be at least 1"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be finite and positive"));
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("feature_dim", "layer widths must be positive"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::config("adam", "need 0 <= beta < 1 and epsilon > 0"));
        }
        self.weights.validate()
    }

    pub fn model_shape(&self, input_dim: usize, n_classes: usize) -> ModelShape {
        ModelShape {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            n_classes,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub centers: CenterStore,
    pub stage: u8,
    pub epoch: usize,
    pub step: u64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
}

/// Epoch means of the loss terms plus validation scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    /// Optimizer steps taken so far in the run.
    pub step: u64,
    pub ce: f64,
    pub class_center: f64,
    pub subject_center: f64,
    pub subject_class: f64,
    pub total: f64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub stage1_best: Checkpoint,
    /// One entry per completed epoch, both stages.
    pub history: Vec<EpochLog>,
    /// Stage aborted on a non-finite loss or gradient, if any.
    pub aborted_stage: Option<u8>,
}

/// Flat view of everything the optimizer updates.
fn pack(params: &ModelParams, centers: &CenterStore) -> Vec<f64> {
    let mut flat = params.to_flat();
    flat.extend_from_slice(centers.class_centers.as_slice());
    flat.extend_from_slice(centers.subject_centers.as_slice());
    flat
}

fn unpack(flat: &[f64], params: &mut ModelParams, centers: &mut CenterStore) {
    let n = params.num_params();
    let nc = centers.class_centers.as_slice().len();
    params.assign_flat(&flat[..n]).expect("layout fixed at pack time");
    centers.class_centers.as_mut_slice().copy_from_slice(&flat[n..n + nc]);
    centers.subject_centers.as_mut_slice().copy_from_slice(&flat[n + nc..]);
}

fn evaluate(params: &ModelParams, inputs: &Matrix, truths: &[usize]) -> Result<(f64, f64)> {
    let out = params.forward(inputs)?;
    let preds: Vec<usize> = out.probabilities.iter_rows().map(|r| argmax(r).0).collect();
    let r = weighted_f1(&preds, truths, params.n_classes())?;
    Ok((r.accuracy, r.weighted_f1))
}

struct StageRun<'a> {
    config: &'a TrainConfig,
    ds: &'a Dataset,
    train: &'a [usize],
    val_inputs: Matrix,
    val_truths: Vec<usize>,
    history: Vec<EpochLog>,
    step: u64,
}

impl StageRun<'_> {
    /// Trains from `start`; returns the stage's best checkpoint (stage 2 counts
    /// `start` as a candidate) and whether a non-finite value cut it short.
    fn run(&mut self, stage: u8, lr: f64, max_epochs: usize, start: Checkpoint) -> Result<(Option<Checkpoint>, bool)> {
        let mut params = start.params.clone();
        let mut centers = start.centers.clone();
        let mut flat = pack(&params, &centers);
        let mut state = OptimState::new(flat.len(), self.config.adam);
        let mut best: Option<Checkpoint> = if stage == 1 { None } else { Some(start) };
        let mut stale = 0;
        let batch_size = self.config.batch_size.min(self.train.len());
        let batch_seed = seed::subseed(self.config.seed, "batches", u64::from(stage));
        let subject_class = self.ds.subject_class();

        for epoch in 0..max_epochs {
            let mut sums = [0.0f64; 5];
            let mut seen = 0usize;
            let mut diverged = false;
            for batch in minibatch_iter(self.ds, self.train, batch_size, batch_seed, epoch as u64)? {
                let inputs = self.ds.feature_matrix(&batch.indices)?;
                let b = backward(&params, &centers, &inputs, &batch, subject_class, &self.config.weights)?;
                if !b.loss.is_finite() {
                    diverged = true;
                    break;
                }
                let mut g_model = b.model.to_flat();
                let mut g_class = b.centers.class_centers.into_vec();
                let mut g_subject = b.centers.subject_centers.into_vec();
                clip_global_norm(&mut [&mut g_model, &mut g_class, &mut g_subject], self.config.clip_norm);
                g_model.extend_from_slice(&g_class);
                g_model.extend_from_slice(&g_subject);
                if adam_step(&mut flat, &g_model, &mut state, lr).is_err() {
                    diverged = true;
                    break;
                }
                unpack(&flat, &mut params, &mut centers);
                self.step += 1;

                let m = batch.len() as f64;
                let l = &b.loss;
                for (s, v) in sums.iter_mut().zip([l.ce, l.class_center, l.subject_center, l.subject_class, l.total]) {
                    *s += m * v;
                }
                seen += batch.len();
            }
            if diverged || !params.is_finite() || !centers.is_finite() {
                return Ok((best, true));
            }

            let (val_accuracy, val_weighted_f1) = evaluate(&params, &self.val_inputs, &self.val_truths)?;
            let n = seen as f64;
            self.history.push(EpochLog {
                stage,
                epoch,
                step: self.step,
                ce: sums[0] / n,
                class_center: sums[1] / n,
                subject_center: sums[2] / n,
                subject_class: sums[3] / n,
                total: sums[4] / n,
                val_accuracy,
                val_weighted_f1,
            });

            if best.as_ref().is_none_or(|b| val_weighted_f1 > b.val_weighted_f1) {
                best = Some(Checkpoint {
                    params: params.clone(),
                    centers: centers.clone(),
                    stage,
                    epoch,
                    step: self.step,
                    val_accuracy,
                    val_weighted_f1,
                });
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.config.patience {
                    break;
                }
            }
        }
        Ok((best, false))
    }
}

/// Initial parameters and centers derived from `config.seed`.
pub fn initial_checkpoint(config: &TrainConfig, ds: &Dataset) -> Checkpoint {
    let shape = config.model_shape(ds.dim(), ds.n_classes());
    Checkpoint {
        params: ModelParams::init(&shape, seed::subseed(config.seed, "init", 0)),
        centers: CenterStore::init(
            ds.n_classes(),
            ds.n_subjects(),
            config.feature_dim,
            seed::subseed(config.seed, "centers", 0),
        ),
        stage: 0,
        epoch: 0,
        step: 0,
        val_accuracy: 0.0,
        val_weighted_f1: 0.0,
    }
}

pub fn train_two_stage(config: &TrainConfig, ds: &Dataset, train: &[usize], val: &[usize]) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let start = initial_checkpoint(config, ds);
    let mut run = StageRun {
        config,
        ds,
        train,
        val_inputs: ds.feature_matrix(val)?,
        val_truths: ds.labels(val),
        history: Vec::new(),
        step: 0,
    };

    let (stage1_best, aborted) = run.run(1, config.stage1_lr, config.stage1_max_epochs, start.clone())?;
    // a first epoch that diverges leaves nothing better than the initialization
    let stage1_best = stage1_best.unwrap_or(start);
    let mut aborted_stage = aborted.then_some(1);
    let mut best = stage1_best.clone();
    if !aborted && config.stage2_max_epochs > 0 {
        let (b, aborted) = run.run(2, config.stage2_lr, config.stage2_max_epochs, stage1_best.clone())?;
        best = b.expect("stage 2 starts from a checkpoint");
        if aborted {
            aborted_stage = Some(2);
        }
    }
    Ok(TrainOutcome {
        best,
        stage1_best,
        history: run.history,
        aborted_stage,
    })
}

/// Mean softmax probabilities over `views` copies of the inputs, each with
/// i.i.d. Gaussian noise of std `jitter` added. One view or zero jitter is a
/// plain forward pass.
///
/// Noise is drawn from `seed::rng(seed)` view by view, row-major within a view.
pub fn predict_proba(params: &ModelParams, inputs: &Matrix, views: usize, jitter: f64, seed: u64) -> Result<Matrix> {
    if views == 0 {
        return Err(Error::config("views", "must be at least 1"));
    }
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::config("jitter", "must be finite and non-negative"));
    }
    if views == 1 || jitter == 0.0 {
        return Ok(params.forward(inputs)?.probabilities);
    }
    let mut rng = seed::rng(seed);
    let mut acc = Matrix::zeros(inputs.rows(), params.n_classes());
    for _ in 0..views {
        let mut view = inputs.clone();
        for v in view.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += jitter * z;
        }
        acc.add_scaled(&params.forward(&view)?.probabilities, 1.0);
    }
    acc.scale(1.0 / views as f64);
    Ok(acc)
}
