//! Fold manifest: a TOML rendering of a [`FoldPlan`].

use std::path::Path;

use hetloss_core::FoldPlan;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldEntry {
    pub subjects: Vec<usize>,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub k: usize,
    pub seed: u64,
    pub tolerance_ratio: f64,
    pub n_subjects: usize,
    pub n_classes: usize,
    /// Worst per-class max/min fold image count; informational.
    pub achieved_ratio: f64,
    pub within_tolerance: bool,
    pub folds: Vec<FoldEntry>,
}

impl Manifest {
    pub fn from_plan(plan: &FoldPlan) -> Self {
        Manifest {
            k: plan.k,
            seed: plan.seed,
            tolerance_ratio: plan.tolerance_ratio,
            n_subjects: plan.assignment.len(),
            n_classes: plan.n_classes(),
            achieved_ratio: plan.achieved_ratio(),
            within_tolerance: plan.within_tolerance(),
            folds: (0..plan.k)
                .map(|f| FoldEntry {
                    subjects: plan.fold_subjects(f),
                    class_counts: plan.per_fold_counts[f].clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds the plan, checking that every subject sits in exactly one fold.
    pub fn to_plan(&self) -> Result<FoldPlan> {
        if self.folds.len() != self.k {
            return Err(CliError::config("folds", format!("expected {} folds, found {}", self.k, self.folds.len())));
        }
        let mut assignment = vec![usize::MAX; self.n_subjects];
        for (f, fold) in self.folds.iter().enumerate() {
            if fold.class_counts.len() != self.n_classes {
                return Err(CliError::config("class_counts", format!("fold {f} needs {} entries", self.n_classes)));
            }
            for &s in &fold.subjects {
                match assignment.get_mut(s) {
                    Some(slot) if *slot == usize::MAX => *slot = f,
                    Some(_) => return Err(CliError::config("subjects", format!("subject {s} appears twice"))),
                    None => return Err(CliError::config("subjects", format!("subject {s} out of range"))),
                }
            }
        }
        if let Some(s) = assignment.iter().position(|&f| f == usize::MAX) {
            return Err(CliError::config("subjects", format!("subject {s} has no fold")));
        }
        Ok(FoldPlan {
            k: self.k,
            seed: self.seed,
            tolerance_ratio: self.tolerance_ratio,
            assignment,
            per_fold_counts: self.folds.iter().map(|f| f.class_counts.clone()).collect(),
        })
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

#[cfg(test)]
mod tests {
    use super::*;
    use hetloss_core::{generate, stratified_subject_folds, GenConfig};

    #[test]
    fn plan_round_trips_through_text() {
        let ds = generate(&GenConfig::paper_analog(2)).unwrap().dataset;
        let plan = stratified_subject_folds(&ds, 7, 11, 1.2).unwrap();
        let m = Manifest::from_plan(&plan);
        let text = toml::to_string(&m).unwrap();
        let back: Manifest = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_plan().unwrap(), plan);
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }

    #[test]
    fn duplicate_subject_rejected() {
        let ds = generate(&GenConfig::paper_analog(2)).unwrap().dataset;
        let plan = stratified_subject_folds(&ds, 2, 1, 1.2).unwrap();
        let mut m = Manifest::from_plan(&plan);
        let s = m.folds[0].subjects[0];
        m.folds[1].subjects.push(s);
        assert!(m.to_plan().is_err());
    }
}
