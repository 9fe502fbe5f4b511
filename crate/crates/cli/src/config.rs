//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! ```toml
//! seed = 7
//!
//! [gen]
//! subjects_per_class = [14, 14]
//!
//! [holdout]
//! subjects_per_class = [6, 6]
//!
//! [split]
//! k = 7
//!
//! [train]
//! stage1_max_epochs = 40
//! weights = { lambda1 = 0.05, lambda2 = 0.05, lambda3 = 0.005 }
//!
//! [predict]
//! views = 5
//! jitter = 0.1
//!
//! [ensemble]
//! thetas = [0.95, 0.98]
//! ```
//!
//! Every stage seed is derived from the root `seed`; the per-stage `seed`
//! fields of `[gen]` and `[train]` are rejected so there is one source of
//! randomness per run.

use std::path::Path;

use hetloss_core::ensemble::DEFAULT_EPSILON_CLAMP;
use hetloss_core::sampler::DEFAULT_TOLERANCE_RATIO;
use hetloss_core::{seed, EnsembleConfig, GenConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoldoutConfig {
    /// Subjects per class of the held-out test set; empty for none.
    pub subjects_per_class: Vec<usize>,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        HoldoutConfig {
            subjects_per_class: vec![6, 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub k: usize,
    pub tolerance_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            k: 7,
            tolerance_ratio: DEFAULT_TOLERANCE_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub views: usize,
    pub jitter: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { views: 5, jitter: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub thetas: Vec<f64>,
    pub epsilon_clamp: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            thetas: vec![0.95, 0.98],
            epsilon_clamp: DEFAULT_EPSILON_CLAMP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenConfig,
    pub holdout: HoldoutConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub ensemble: EnsembleSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub thetas: Vec<f64>,
    pub views: Option<usize>,
    pub jitter: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config("config", e.message().to_owned()))?;
        for section in ["gen", "train"] {
            if table.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(CliError::config(
                    format!("{section}.seed"),
                    "stage seeds are derived from the root `seed`",
                ));
            }
        }
        toml::from_str(text).map_err(|e: toml::de::Error| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_owned();
            CliError::config(field, e.message().to_owned())
        })
    }

    /// Reads `path` if given, otherwise starts from the defaults, then applies
    /// the overrides and validates everything.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if !overrides.thetas.is_empty() {
            config.ensemble.thetas = overrides.thetas.clone();
        }
        if let Some(v) = overrides.views {
            config.predict.views = v;
        }
        if let Some(j) = overrides.jitter {
            config.predict.jitter = j;
        }
        config.gen.seed = config.gen_seed();
        config.train.seed = config.train_seed(0);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate().map_err(|e| prefixed("gen", e))?;
        if !self.holdout.subjects_per_class.is_empty()
            && (self.holdout.subjects_per_class.len() != self.gen.n_classes
                || self.holdout.subjects_per_class.contains(&0))
        {
            return Err(CliError::config(
                "holdout.subjects_per_class",
                format!("need {} positive entries or none", self.gen.n_classes),
            ));
        }
        if self.split.k < 2 {
            return Err(CliError::config("split.k", "need at least 2 folds"));
        }
        if !(self.split.tolerance_ratio.is_finite() && self.split.tolerance_ratio >= 1.0) {
            return Err(CliError::config("split.tolerance_ratio", "must be a finite value >= 1"));
        }
        self.train.validate().map_err(|e| prefixed("train", e))?;
        if self.predict.views == 0 {
            return Err(CliError::config("predict.views", "must be at least 1"));
        }
        if !(self.predict.jitter.is_finite() && self.predict.jitter >= 0.0) {
            return Err(CliError::config("predict.jitter", "must be finite and non-negative"));
        }
        if self.ensemble.thetas.is_empty() {
            return Err(CliError::config("ensemble.thetas", "need at least one threshold"));
        }
        for &theta in &self.ensemble.thetas {
            self.ensemble_config(theta)?;
        }
        Ok(())
    }

    pub fn ensemble_config(&self, theta: f64) -> Result<EnsembleConfig> {
        let c = EnsembleConfig {
            theta,
            epsilon_clamp: self.ensemble.epsilon_clamp,
        };
        c.validate(self.gen.n_classes).map_err(|e| prefixed("ensemble", e))?;
        Ok(c)
    }

    pub fn gen_seed(&self) -> u64 {
        seed::subseed(self.seed, "gen", 0)
    }

    pub fn split_seed(&self) -> u64 {
        seed::subseed(self.seed, "split", 0)
    }

    pub fn train_seed(&self, fold: usize) -> u64 {
        seed::subseed(self.seed, "train", fold as u64)
    }

    pub fn predict_seed(&self, model: usize) -> u64 {
        seed::subseed(self.seed, "predict", model as u64)
    }

    /// Training config of one fold.
    pub fn fold_train_config(&self, fold: usize) -> TrainConfig {
        TrainConfig {
            seed: self.train_seed(fold),
            ..self.train.clone()
        }
    }
}

fn prefixed(section: &str, e: hetloss_core::Error) -> CliError {
    match e {
        hetloss_core::Error::InvalidConfig { field, reason } => CliError::config(format!("{section}.{field}"), reason),
        other => other.into(),
    }
}
