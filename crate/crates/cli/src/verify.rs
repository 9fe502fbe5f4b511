//! Property suite behind `hetloss verify`: each check compares a library
//! routine against a separately written reference computation on seeded
//! random inputs.

use hetloss_core::model::backward;
use hetloss_core::seed::{self, Rng};
use hetloss_core::{
    decide, finite_difference_check, fold_train_val, generate, heterogeneity_loss, partition_batch,
    stratified_subject_folds, subject_class_center_loss, weighted_f1, Activation, CenterStore, Dataset,
    EnsembleConfig, FdOptions, GenConfig, Head, LossWeights, Matrix, ModelConfidences, ModelParams, ModelShape,
    ParamGroup, Rule, Sample,
};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sizes agree")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Subjects `0..n_s` with classes `subject_class`; every subject gets at
/// least one of the `m` rows.
fn random_dataset(rng: &mut Rng, m: usize, d: usize, subject_class: &[usize], n_classes: usize) -> Dataset {
    let n_s = subject_class.len();
    let samples = (0..m)
        .map(|i| {
            let s = if i < n_s { i } else { rng.random_range(0..n_s) };
            Sample::new((0..d).map(|_| normal(rng)).collect(), s, subject_class[s])
        })
        .collect();
    Dataset::new(d, n_classes, subject_class.to_vec(), samples)
}

fn random_subject_classes(rng: &mut Rng, n_s: usize, n_classes: usize) -> Vec<usize> {
    // classes cycle first so every class has a subject, then get shuffled
    let mut sc: Vec<usize> = (0..n_s).map(|s| s % n_classes).collect();
    for i in (1..n_s).rev() {
        sc.swap(i, rng.random_range(0..=i));
    }
    sc
}

/// Group names accepted by [`gradient_check`]'s fault injection.
pub fn gradient_groups(hidden_layers: usize) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..=hidden_layers {
        names.push(format!("layer{i}.weight"));
        names.push(format!("layer{i}.bias"));
    }
    names.extend(["head.weight", "head.bias", "class_centers", "subject_centers"].map(str::to_owned));
    names
}

const GRAD_HIDDEN: [usize; 2] = [6, 5];

/// End-to-end gradients of the heterogeneity loss through the feature
/// extractor against central differences, on `instances` random problems
/// with d ≤ 8, m ≤ 16, two classes and at most six subjects. `fault` adds an
/// error to the analytic gradient of the named group.
pub fn gradient_check(instances: usize, fault: Option<&str>) -> Check {
    const NAME: &str = "gradients";
    if let Some(f) = fault {
        if !gradient_groups(GRAD_HIDDEN.len()).iter().any(|g| g == f) {
            return Check {
                name: NAME,
                passed: false,
                detail: format!("unknown group `{f}`"),
            };
        }
    }
    let mut worst = 0.0f64;
    let mut failures: Vec<String> = Vec::new();
    for inst in 0..instances {
        let mut rng = seed::rng(seed::subseed(0, "verify-grad", inst as u64));
        let d = rng.random_range(2..=8);
        let m = rng.random_range(6..=16);
        let n_s = rng.random_range(2..=6);
        let feature_dim = rng.random_range(2..=8);
        let subject_class = random_subject_classes(&mut rng, n_s, 2);
        let ds = random_dataset(&mut rng, m, d, &subject_class, 2);
        let idx: Vec<usize> = (0..m).collect();
        let batch = partition_batch(&ds, &idx).expect("valid batch");
        let inputs = ds.feature_matrix(&idx).expect("valid rows");
        let shape = ModelShape {
            input_dim: d,
            hidden: GRAD_HIDDEN.to_vec(),
            feature_dim,
            n_classes: 2,
            activation: Activation::Tanh,
        };
        let params = ModelParams::init(&shape, rng.random());
        let centers = CenterStore::init(2, n_s, feature_dim, rng.random());
        let w = LossWeights::DEFAULT;
        let b = backward(&params, &centers, &inputs, &batch, &subject_class, &w).expect("finite loss");

        let mut groups: Vec<ParamGroup> = params
            .blocks()
            .into_iter()
            .zip(b.model.blocks())
            .map(|((name, _, _, v), (_, _, _, g))| ParamGroup::new(name, v.to_vec(), g.to_vec()))
            .collect();
        groups.push(ParamGroup::new(
            "class_centers",
            centers.class_centers.as_slice().to_vec(),
            b.centers.class_centers.as_slice().to_vec(),
        ));
        groups.push(ParamGroup::new(
            "subject_centers",
            centers.subject_centers.as_slice().to_vec(),
            b.centers.subject_centers.as_slice().to_vec(),
        ));
        if let Some(f) = fault {
            let g = groups.iter_mut().find(|g| g.name == f).expect("checked above");
            g.analytic[0] += 1e-3 * (1.0 + g.analytic[0].abs());
        }

        let n_params = params.num_params();
        let report = finite_difference_check(
            |g| {
                let mut p = ModelParams::zeros(&shape);
                let flat: Vec<f64> = g[..g.len() - 2].iter().flat_map(|x| x.values.iter().copied()).collect();
                debug_assert_eq!(flat.len(), n_params);
                p.assign_flat(&flat).expect("sizes agree");
                let c = CenterStore {
                    class_centers: Matrix::from_vec(2, feature_dim, g[g.len() - 2].values.clone()).expect("sizes agree"),
                    subject_centers: Matrix::from_vec(n_s, feature_dim, g[g.len() - 1].values.clone())
                        .expect("sizes agree"),
                };
                backward(&p, &c, &inputs, &batch, &subject_class, &w)
                    .map_or(f64::NAN, |b| b.loss.total)
            },
            &mut groups,
            &FdOptions::default(),
        );
        worst = worst.max(report.max_rel_error());
        for g in report.failing() {
            failures.push(format!("instance {inst} group {} error {:.2e}", g.name, g.max_rel_error));
        }
    }
    Check {
        name: NAME,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{instances} instances, max relative error {worst:.2e}")
        } else {
            failures.join("; ")
        },
    }
}

/// `total` against the weighted sum of the reported terms with the default
/// weights.
pub fn decomposition_check(batches: usize) -> Check {
    let w = LossWeights::DEFAULT;
    let mut worst = 0.0f64;
    for b in 0..batches {
        let mut rng = seed::rng(seed::subseed(0, "verify-decomp", b as u64));
        let n_c = rng.random_range(2..=3);
        let n_s = rng.random_range(n_c..=8);
        let m = rng.random_range(n_s..=32);
        let d = rng.random_range(1..=8);
        let subject_class = random_subject_classes(&mut rng, n_s, n_c);
        let ds = random_dataset(&mut rng, m, d, &subject_class, n_c);
        let idx: Vec<usize> = (0..m).collect();
        let batch = partition_batch(&ds, &idx).expect("valid batch");
        let features = ds.feature_matrix(&idx).expect("valid rows");
        let head = Head {
            weight: random_matrix(&mut rng, n_c, d, 1.0),
            bias: (0..n_c).map(|_| normal(&mut rng)).collect(),
        };
        let centers = CenterStore {
            class_centers: random_matrix(&mut rng, n_c, d, 1.0),
            subject_centers: random_matrix(&mut rng, n_s, d, 1.0),
        };
        let l = heterogeneity_loss(&batch, &features, &head, &centers, &subject_class, &w).expect("finite loss");
        let expected = l.ce + 0.05 * l.class_center + 0.05 * l.subject_center + 0.005 * l.subject_class;
        worst = worst.max((l.total - expected).abs() / expected.abs().max(f64::MIN_POSITIVE));
    }
    Check {
        name: "decomposition",
        passed: worst <= 1e-12,
        detail: format!("{batches} batches, max relative deviation {worst:.2e}"),
    }
}

/// Ordered-pair loop over subject centers: squared distance for same-class
/// pairs, 1/(1+d²) for different-class pairs.
pub fn pair_term_oracle(subjects: &[usize], centers: &Matrix, subject_class: &[usize]) -> f64 {
    let mut total = 0.0;
    for &a in subjects {
        for &b in subjects {
            if a == b {
                continue;
            }
            let d2: f64 = centers
                .row(a)
                .iter()
                .zip(centers.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += if subject_class[a] == subject_class[b] {
                d2
            } else {
                1.0 / (1.0 + d2)
            };
        }
    }
    total
}

/// Every subset of at most five subjects drawn from a pool of seven, over
/// `instances` random center tables, plus coincident centers of different
/// classes.
pub fn pair_term_check(instances: usize) -> Check {
    const POOL: usize = 7;
    let mut worst = 0.0f64;
    let mut subsets = 0usize;
    for inst in 0..instances {
        let mut rng = seed::rng(seed::subseed(0, "verify-pair", inst as u64));
        let n_c = rng.random_range(2..=3);
        let d = rng.random_range(1..=6);
        let subject_class: Vec<usize> = (0..POOL).map(|_| rng.random_range(0..n_c)).collect();
        let table = random_matrix(&mut rng, POOL, d, 1.5);
        let centers = CenterStore {
            class_centers: Matrix::zeros(n_c, d),
            subject_centers: table.clone(),
        };
        for mask in 0u32..(1 << POOL) {
            if mask.count_ones() > 5 {
                continue;
            }
            let set: Vec<usize> = (0..POOL).filter(|&s| mask & (1 << s) != 0).collect();
            let got = subject_class_center_loss(&set, &centers, &subject_class).expect("valid subjects").value;
            worst = worst.max(rel_err(got, pair_term_oracle(&set, &table, &subject_class)));
            subsets += 1;
        }
    }

    // two different-class subjects at the same point, then five sharing a point
    let coincident = |classes: Vec<usize>| {
        let n = classes.len();
        let centers = CenterStore {
            class_centers: Matrix::zeros(3, 2),
            subject_centers: Matrix::from_vec(n, 2, [0.3, -1.2].repeat(n)).expect("sizes agree"),
        };
        let set: Vec<usize> = (0..n).collect();
        subject_class_center_loss(&set, &centers, &classes).expect("valid subjects").value
    };
    let single = coincident(vec![0, 1]);
    // classes 0,0,1,1,2: 8 unordered different-class pairs
    let mixed = coincident(vec![0, 0, 1, 1, 2]);
    let exact = single == 2.0 && mixed == 16.0;
    Check {
        name: "pair term",
        passed: worst <= 1e-12 && exact,
        detail: format!(
            "{subsets} subsets, max relative deviation {worst:.2e}; coincident pair {single}, five coincident subjects {mixed}"
        ),
    }
}

/// The decision rule written out step by step: look for any model whose top
/// probability exceeds θ (first such maximum wins); failing that, average the
/// clamped reciprocals per class, invert, normalize and take the first
/// maximum.
pub fn ensemble_oracle(models: &[Vec<f64>], theta: f64, eps: f64) -> (usize, f64, Rule) {
    let mut best_conf = f64::NEG_INFINITY;
    let mut best_class = 0;
    for p in models {
        let mut top = 0;
        for c in 1..p.len() {
            if p[c] > p[top] {
                top = c;
            }
        }
        if p[top] > best_conf {
            best_conf = p[top];
            best_class = top;
        }
    }
    if best_conf > theta {
        return (best_class, best_conf, Rule::MaxVote);
    }
    let n_c = models[0].len();
    let mut hm = vec![0.0; n_c];
    for (c, slot) in hm.iter_mut().enumerate() {
        let mut recip = 0.0;
        for p in models {
            recip += 1.0 / if p[c] < eps { eps } else { p[c] };
        }
        *slot = models.len() as f64 / recip;
    }
    let z: f64 = hm.iter().sum();
    let mut class = 0;
    for c in 0..n_c {
        hm[c] /= z;
        if hm[c] > hm[class] {
            class = c;
        }
    }
    (class, hm[class], Rule::Harmonic)
}

fn random_prob(rng: &mut Rng, n_c: usize, sharpness: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..n_c).map(|_| sharpness * normal(rng)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// One confidence set of `k` models. Some sets are built to hit the rule's
/// edge cases: a model exactly at θ, two models tied at the top with
/// different classes, identical models, uniform vectors.
pub fn random_confidence_set(rng: &mut Rng, k: usize, n_c: usize, theta: f64) -> Vec<Vec<f64>> {
    let sharpness = [0.5, 2.0, 5.0, 9.0][rng.random_range(0..4)];
    let mut models: Vec<Vec<f64>> = (0..k).map(|_| random_prob(rng, n_c, sharpness)).collect();
    let onehot_ish = |class: usize, top: f64| -> Vec<f64> {
        let rest = (1.0 - top) / (n_c - 1) as f64;
        (0..n_c).map(|c| if c == class { top } else { rest }).collect()
    };
    match rng.random_range(0..6) {
        0 => {
            let i = rng.random_range(0..k);
            models[i] = onehot_ish(rng.random_range(0..n_c), theta);
        }
        1 => {
            let top = if rng.random_bool(0.5) { 0.99 } else { 0.9 };
            let (i, j) = (rng.random_range(0..k), rng.random_range(0..k));
            models[i] = onehot_ish(0, top);
            if i != j {
                models[j] = onehot_ish(1, top);
            }
        }
        2 => {
            let p = random_prob(rng, n_c, sharpness);
            models.iter_mut().for_each(|m| m.clone_from(&p));
        }
        3 => {
            let u = vec![1.0 / n_c as f64; n_c];
            models.iter_mut().for_each(|m| m.clone_from(&u));
        }
        _ => {}
    }
    models
}

/// `sets` random K=7 confidence sets at θ = 0.95 and 0.98.
pub fn ensemble_check(sets: usize) -> Check {
    let mut mismatches = 0usize;
    let mut max_votes = 0usize;
    let mut first = None;
    let mut cases = 0usize;
    for i in 0..sets {
        let mut rng = seed::rng(seed::subseed(0, "verify-ensemble", i as u64));
        let n_c = rng.random_range(2..=3);
        for theta in [0.95, 0.98] {
            let models = random_confidence_set(&mut rng, 7, n_c, theta);
            let cfg = EnsembleConfig::new(theta).expect("valid theta");
            let got = decide(&ModelConfidences::new(models.clone()).expect("valid probabilities"), &cfg);
            let (class, conf, rule) = ensemble_oracle(&models, theta, cfg.epsilon_clamp);
            let same = got.class == class && got.rule == rule && rel_err(got.confidence, conf) <= 1e-12;
            if !same {
                mismatches += 1;
                first.get_or_insert(format!("set {i} theta {theta}"));
            }
            max_votes += usize::from(rule == Rule::MaxVote);
            cases += 1;
        }
    }
    Check {
        name: "ensemble rule",
        passed: mismatches == 0,
        detail: match first {
            None => format!("{cases} cases agree ({max_votes} max-vote)"),
            Some(f) => format!("{mismatches} of {cases} cases differ, first at {f}"),
        },
    }
}

/// Per-class F1 from true-positive, false-positive and false-negative counts,
/// weighted by support; 0 where the class was never predicted nor present.
pub fn weighted_f1_oracle(preds: &[usize], truths: &[usize], n_c: usize) -> f64 {
    let mut score = 0.0;
    for c in 0..n_c {
        let tp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t == c).count();
        let fp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t != c).count();
        let fn_ = preds.iter().zip(truths).filter(|&(&p, &t)| p != c && t == c).count();
        let support = tp + fn_;
        let f1 = if tp == 0 {
            0.0
        } else {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / support as f64;
            2.0 * precision * recall / (precision + recall)
        };
        score += support as f64 * f1;
    }
    score / truths.len() as f64
}

/// The hand-worked confusion matrix [[8,2],[3,7]].
pub const HAND_WEIGHTED_F1: f64 = 0.749_373_433_583_959_9;

pub fn metrics_check(pairs: usize) -> Check {
    let mut worst = 0.0f64;
    for i in 0..pairs {
        let mut rng = seed::rng(seed::subseed(0, "verify-metrics", i as u64));
        let n = rng.random_range(1..=200);
        let n_c = rng.random_range(2..=3);
        let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_c)).collect();
        let skill = rng.random::<f64>();
        let preds: Vec<usize> = truths
            .iter()
            .map(|&t| if rng.random_bool(skill) { t } else { rng.random_range(0..n_c) })
            .collect();
        let got = weighted_f1(&preds, &truths, n_c).expect("valid labels").weighted_f1;
        worst = worst.max(rel_err(got, weighted_f1_oracle(&preds, &truths, n_c)));
    }
    let truths = [[0usize; 10], [1; 10]].concat();
    let preds = [vec![0; 8], vec![1; 2], vec![0; 3], vec![1; 7]].concat();
    let hand = weighted_f1(&preds, &truths, 2).expect("valid labels").weighted_f1;
    let hand_ok = (hand - HAND_WEIGHTED_F1).abs() <= 1e-12;
    Check {
        name: "weighted F1",
        passed: worst <= 1e-12 && hand_ok,
        detail: format!("{pairs} pairs, max relative deviation {worst:.2e}; [[8,2],[3,7]] gives {hand:.12}"),
    }
}

/// Per-seed outcome of fold construction on one generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAudit {
    pub seed: u64,
    /// Samples whose subject also appears on the other side of some fold.
    pub leaked: usize,
    pub achieved_ratio: f64,
    /// Smallest max/min ratio any subject-disjoint assignment can reach for
    /// the worst class.
    pub ratio_lower_bound: f64,
}

/// Largest single subject against the mean load of the other folds: the fold
/// holding it has at least its count, and some other fold at most the mean of
/// what remains.
pub fn ratio_lower_bound(ds: &Dataset, k: usize) -> f64 {
    let counts = ds.subject_counts();
    let mut bound = 1.0f64;
    for c in 0..ds.n_classes() {
        let mine: Vec<usize> = (0..ds.n_subjects())
            .filter(|&s| ds.subject_class()[s] == c)
            .map(|s| counts[s])
            .collect();
        let total: usize = mine.iter().sum();
        let largest = mine.iter().copied().max().unwrap_or(0);
        if k > 1 && total > largest {
            let rest = (total - largest) as f64 / (k - 1) as f64;
            bound = bound.max(largest as f64 / rest);
        }
    }
    bound
}

pub fn audit_splits(seeds: std::ops::Range<u64>, k: usize) -> Vec<SplitAudit> {
    seeds
        .map(|s| {
            let ds = generate(&GenConfig::paper_analog(s)).expect("default generator").dataset;
            let plan = stratified_subject_folds(&ds, k, s, 1.2).expect("enough subjects");
            let mut leaked = 0;
            let mut seen = vec![0usize; ds.len()];
            for fold in 0..k {
                let (train, val) = fold_train_val(&plan, &ds, fold).expect("fold in range");
                let val_subjects: std::collections::BTreeSet<usize> =
                    val.iter().map(|&i| ds.sample(i).subject).collect();
                leaked += train.iter().filter(|&&i| val_subjects.contains(&ds.sample(i).subject)).count();
                for i in train.iter().chain(&val) {
                    seen[*i] += 1;
                }
            }
            // each sample is on exactly one side in every fold
            leaked += seen.iter().filter(|&&n| n != k).count();
            SplitAudit {
                seed: s,
                leaked,
                achieved_ratio: plan.achieved_ratio(),
                ratio_lower_bound: ratio_lower_bound(&ds, k),
            }
        })
        .collect()
}

pub fn leakage_check(seeds: u64) -> Check {
    let audits = audit_splits(0..seeds, 7);
    let leaked: usize = audits.iter().map(|a| a.leaked).sum();
    let worst = audits.iter().map(|a| a.achieved_ratio).fold(0.0, f64::max);
    Check {
        name: "subject leakage",
        passed: leaked == 0,
        detail: format!("{seeds} datasets, k=7, {leaked} leaked samples; worst class ratio {worst:.3}"),
    }
}

/// The full suite as run by `hetloss verify`.
pub fn run_all(fault: Option<&str>) -> Vec<Check> {
    vec![
        gradient_check(20, fault),
        decomposition_check(100),
        pair_term_check(40),
        ensemble_check(1000),
        metrics_check(500),
        leakage_check(50),
    ]
}
