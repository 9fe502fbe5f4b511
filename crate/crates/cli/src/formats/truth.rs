//! Ground-truth sidecar written next to a generated dataset.

use std::path::Path;

use hetloss_core::{GenConfig, GroundTruth, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub root_seed: u64,
    pub generator: GenConfig,
    /// `"train"` or `"holdout"`.
    pub stream: String,
    pub subject_counts: Vec<usize>,
    pub class_means: Vec<Vec<f64>>,
    pub subject_offsets: Vec<Vec<f64>>,
}

impl TruthFile {
    pub fn new(root_seed: u64, generator: &GenConfig, stream: &str, truth: &GroundTruth) -> Self {
        let rows = |m: &Matrix| m.iter_rows().map(<[f64]>::to_vec).collect();
        TruthFile {
            root_seed,
            generator: generator.clone(),
            stream: stream.to_owned(),
            subject_counts: truth.subject_counts.clone(),
            class_means: rows(&truth.class_means),
            subject_offsets: rows(&truth.subject_offsets),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Failed(e.to_string()))?;
        super::write_file(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::format(path, 0, e.to_string()))
    }
}
