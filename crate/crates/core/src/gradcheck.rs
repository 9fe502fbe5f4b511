//! Central finite-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::seed;

/// A named block of parameters with the analytic gradient claimed for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub values: Vec<f64>,
    pub analytic: Vec<f64>,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, values: Vec<f64>, analytic: Vec<f64>) -> Self {
        ParamGroup {
            name: name.into(),
            values,
            analytic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Groups larger than this are checked on a seeded subsample of coordinates.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            epsilon: 1e-5,
            tolerance: 1e-5,
            max_coords: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    /// ‖g_analytic − g_fd‖∞ / max(1, ‖g_fd‖∞) over the checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// The loss was non-finite at some perturbed point.
    pub non_finite: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub groups: Vec<GroupReport>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn failing(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| !g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares each group's `analytic` gradient to central differences of `eval`.
///
/// `eval` sees all groups with one coordinate perturbed at a time; values are
/// restored bit-exactly afterwards.
pub fn finite_difference_check<F>(mut eval: F, groups: &mut [ParamGroup], opts: &FdOptions) -> FdReport
where
    F: FnMut(&[ParamGroup]) -> f64,
{
    assert!(opts.epsilon > 0.0, "epsilon must be positive");
    let mut reports = Vec::with_capacity(groups.len());
    for gi in 0..groups.len() {
        let n = groups[gi].values.len();
        assert_eq!(
            n,
            groups[gi].analytic.len(),
            "group `{}`: analytic gradient length mismatch",
            groups[gi].name
        );
        let coords: Vec<usize> = if n > opts.max_coords {
            let mut rng = seed::rng(seed::subseed(opts.seed, "fd-coords", gi as u64));
            let mut picked = rand::seq::index::sample(&mut rng, n, opts.max_coords).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..n).collect()
        };

        let mut non_finite = false;
        let mut max_abs_diff: f64 = 0.0;
        let mut max_fd: f64 = 0.0;
        for &k in &coords {
            let original = groups[gi].values[k];
            groups[gi].values[k] = original + opts.epsilon;
            let plus = eval(groups);
            groups[gi].values[k] = original - opts.epsilon;
            let minus = eval(groups);
            groups[gi].values[k] = original;
            if !(plus.is_finite() && minus.is_finite()) {
                non_finite = true;
                continue;
            }
            let fd = (plus - minus) / (2.0 * opts.epsilon);
            max_abs_diff = max_abs_diff.max((groups[gi].analytic[k] - fd).abs());
            max_fd = max_fd.max(fd.abs());
        }
        let max_rel_error = max_abs_diff / max_fd.max(1.0);
        let passed = !non_finite && max_rel_error < opts.tolerance;
        reports.push(GroupReport {
            name: groups[gi].name.clone(),
            max_rel_error,
            checked: coords.len(),
            non_finite,
            passed,
        });
    }
    FdReport { groups: reports }
}
