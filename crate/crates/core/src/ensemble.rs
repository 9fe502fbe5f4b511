//! Thresholded ensemble decision over K independently trained models.
//!
//! If the most confident model is strictly more confident than `theta`, its
//! argmax is the answer (max-vote). Otherwise the per-class harmonic mean of
//! all K probability vectors is taken and its argmax is the answer.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::argmax;

pub const DEFAULT_EPSILON_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnsembleConfig {
    pub theta: f64,
    pub epsilon_clamp: f64,
}

impl EnsembleConfig {
    pub fn new(theta: f64) -> Result<Self> {
        let c = EnsembleConfig {
            theta,
            epsilon_clamp: DEFAULT_EPSILON_CLAMP,
        };
        c.validate(2)?;
        Ok(c)
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(0.9..1.0).contains(&self.theta) {
            return Err(Error::config("theta", "must lie in [0.9, 1.0)"));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 1.0 / n_classes as f64) {
            return Err(Error::config(
                "epsilon_clamp",
                format!("must lie in (0, 1/{n_classes})"),
            ));
        }
        Ok(())
    }
}

/// One probability vector per model, for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfidences(Vec<Vec<f64>>);

impl ModelConfidences {
    /// Checks that every vector has the same length, is non-negative and sums
    /// to 1 within 1e-9.
    pub fn new(per_model: Vec<Vec<f64>>) -> Result<Self> {
        let n_classes = per_model.first().ok_or(Error::Empty("model confidences"))?.len();
        if n_classes == 0 {
            return Err(Error::Empty("probability vector"));
        }
        for (k, p) in per_model.iter().enumerate() {
            if p.len() != n_classes {
                return Err(Error::ShapeMismatch {
                    what: "probability vector length",
                    expected: n_classes,
                    found: p.len(),
                });
            }
            if p.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::config("confidences", format!("model {k} has a negative or non-finite entry")));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config("confidences", format!("model {k} sums to {sum}")));
            }
        }
        Ok(ModelConfidences(per_model))
    }

    pub fn models(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn n_classes(&self) -> usize {
        self.0[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    MaxVote,
    Harmonic,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::MaxVote => "max-vote",
            Rule::Harmonic => "harmonic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub class: usize,
    pub confidence: f64,
    pub rule: Rule,
}

/// Per-class harmonic mean `K / Σ_k 1/max(p_k[c], ε)`, renormalized to sum to 1.
pub fn harmonic_mean_probs(confidences: &ModelConfidences, epsilon_clamp: f64) -> Vec<f64> {
    let k = confidences.k() as f64;
    let mut hm: Vec<f64> = (0..confidences.n_classes())
        .map(|c| {
            let inv: f64 = confidences
                .models()
                .iter()
                .map(|p| 1.0 / p[c].max(epsilon_clamp))
                .sum();
            k / inv
        })
        .collect();
    let total: f64 = hm.iter().sum();
    hm.iter_mut().for_each(|v| *v /= total);
    hm
}

pub fn decide(confidences: &ModelConfidences, config: &EnsembleConfig) -> Decision {
    // most confident model, lowest index on ties
    let mut best = argmax(&confidences.models()[0]);
    for p in &confidences.models()[1..] {
        let cand = argmax(p);
        if cand.1 > best.1 {
            best = cand;
        }
    }
    if best.1 > config.theta {
        return Decision {
            class: best.0,
            confidence: best.1,
            rule: Rule::MaxVote,
        };
    }
    let hm = harmonic_mean_probs(confidences, config.epsilon_clamp);
    let (class, confidence) = argmax(&hm);
    Decision {
        class,
        confidence,
        rule: Rule::Harmonic,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchDecisions {
    pub decisions: Vec<Decision>,
    pub max_vote_fraction: f64,
    pub harmonic_fraction: f64,
}

impl BatchDecisions {
    pub fn count(&self, rule: Rule) -> usize {
        self.decisions.iter().filter(|d| d.rule == rule).count()
    }
}

/// Applies [`decide`] to every sample; all samples must carry the same K.
pub fn batch_decide(samples: &[ModelConfidences], config: &EnsembleConfig) -> Result<BatchDecisions> {
    let first = samples.first().ok_or(Error::Empty("sample list"))?;
    config.validate(first.n_classes())?;
    let k = first.k();
    if let Some((sample, c)) = samples.iter().enumerate().find(|(_, c)| c.k() != k) {
        return Err(Error::ModelCountMismatch {
            sample,
            expected: k,
            found: c.k(),
        });
    }
    let decisions: Vec<Decision> = samples.iter().map(|c| decide(c, config)).collect();
    let n = decisions.len() as f64;
    let max_votes = decisions.iter().filter(|d| d.rule == Rule::MaxVote).count() as f64;
    Ok(BatchDecisions {
        max_vote_fraction: max_votes / n,
        harmonic_fraction: (n - max_votes) / n,
        decisions,
    })
}
