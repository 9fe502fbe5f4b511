//! One function per pipeline stage. Each reads its inputs from files, writes
//! its outputs into the output directory and returns a short summary for the
//! terminal.

use std::path::{Path, PathBuf};

use hetloss_core::synth::generate_holdout;
use hetloss_core::{
    batch_decide, fold_train_val, generate, high_confidence_subset_eval, predict_proba, stratified_subject_folds,
    train_two_stage, weighted_f1, Dataset, Matrix, Rule,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::checkpoint::CheckpointFile;
use crate::formats::dataset::{read_dataset, write_dataset};
use crate::formats::manifest::Manifest;
use crate::formats::tables::{
    metrics_table, read_decisions, write_decisions, write_metrics_csv, write_train_log, write_val_log,
    ConfidenceTable, MetricsRow,
};
use crate::formats::truth::TruthFile;

pub const DATASET_FILE: &str = "dataset.txt";
pub const TRUTH_FILE: &str = "truth.toml";
pub const TEST_FILE: &str = "test.txt";
pub const TEST_TRUTH_FILE: &str = "test_truth.toml";
pub const MANIFEST_FILE: &str = "folds.toml";
pub const CONFIDENCE_FILE: &str = "confidences.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const ENSEMBLE_STATS: &str = "ensemble_stats.csv";

pub fn checkpoint_file(fold: usize) -> String {
    format!("fold{fold}.ckpt")
}

pub fn decisions_file(theta: f64) -> String {
    format!("decisions_theta{theta}.csv")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes the training dataset, its ground truth and, when configured, a
/// held-out test set of fresh subjects.
pub fn gen(config: &RunConfig, out_dir: &Path) -> Result<String> {
    ensure_dir(out_dir)?;
    let g = generate(&config.gen)?;
    write_dataset(&out_dir.join(DATASET_FILE), &g.dataset)?;
    TruthFile::new(config.seed, &config.gen, "train", &g.truth).write(&out_dir.join(TRUTH_FILE))?;
    let counts = g.dataset.class_counts();
    let mut summary = format!(
        "{}: {} samples, {} subjects, class counts {:?}",
        DATASET_FILE,
        g.dataset.len(),
        g.dataset.n_subjects(),
        counts
    );
    if !config.holdout.subjects_per_class.is_empty() {
        let h = generate_holdout(&config.gen, &config.holdout.subjects_per_class)?;
        write_dataset(&out_dir.join(TEST_FILE), &h.dataset)?;
        TruthFile::new(config.seed, &config.gen, "holdout", &h.truth).write(&out_dir.join(TEST_TRUTH_FILE))?;
        summary.push_str(&format!(
            "\n{}: {} samples, {} subjects",
            TEST_FILE,
            h.dataset.len(),
            h.dataset.n_subjects()
        ));
    }
    Ok(summary)
}

pub fn split(config: &RunConfig, dataset: &Path, out_dir: &Path) -> Result<String> {
    ensure_dir(out_dir)?;
    let ds = read_dataset(dataset)?;
    let plan = stratified_subject_folds(&ds, config.split.k, config.split_seed(), config.split.tolerance_ratio)?;
    let manifest = Manifest::from_plan(&plan);
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    let mut summary = format!("{}: k={} seed={}\n", MANIFEST_FILE, plan.k, plan.seed);
    for c in 0..plan.n_classes() {
        let counts: Vec<usize> = plan.per_fold_counts.iter().map(|f| f[c]).collect();
        summary.push_str(&format!("class {c}: fold counts {counts:?}, max/min {:.3}\n", plan.class_ratio(c)));
    }
    summary.push_str(&format!(
        "stratification ratio {:.3} ({} tolerance {})",
        plan.achieved_ratio(),
        if plan.within_tolerance() { "within" } else { "exceeds" },
        plan.tolerance_ratio
    ));
    Ok(summary)
}

/// Which folds to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldSel {
    One(usize),
    All,
}

impl std::str::FromStr for FoldSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            Ok(FoldSel::All)
        } else {
            s.parse()
                .map(FoldSel::One)
                .map_err(|_| format!("expected a fold index or `all`, found `{s}`"))
        }
    }
}

struct FoldRun {
    fold: usize,
    file: CheckpointFile,
    history: Vec<hetloss_core::EpochLog>,
    aborted: Option<u8>,
}

fn train_fold(config: &RunConfig, ds: &Dataset, manifest: &Manifest, fold: usize) -> Result<FoldRun> {
    let plan = manifest.to_plan()?;
    let (train, val) = fold_train_val(&plan, ds, fold)?;
    let tc = config.fold_train_config(fold);
    let out = train_two_stage(&tc, ds, &train, &val)?;
    Ok(FoldRun {
        fold,
        file: CheckpointFile::new(Some(fold), &tc, &out.best),
        history: out.history,
        aborted: out.aborted_stage,
    })
}

/// Trains the selected folds, `threads` at a time. Folds share nothing
/// mutable, so the outputs do not depend on `threads`.
pub fn train(
    config: &RunConfig,
    dataset: &Path,
    manifest_path: &Path,
    folds: FoldSel,
    threads: usize,
    out_dir: &Path,
) -> Result<String> {
    ensure_dir(out_dir)?;
    let ds = read_dataset(dataset)?;
    let manifest = Manifest::read(manifest_path)?;
    if manifest.n_subjects != ds.n_subjects() {
        return Err(CliError::Usage(format!(
            "manifest covers {} subjects but the dataset has {}",
            manifest.n_subjects,
            ds.n_subjects()
        )));
    }
    let folds: Vec<usize> = match folds {
        FoldSel::All => (0..manifest.k).collect(),
        FoldSel::One(f) if f < manifest.k => vec![f],
        FoldSel::One(f) => return Err(hetloss_core::Error::FoldOutOfRange { fold: f, k: manifest.k }.into()),
    };
    let threads = threads.clamp(1, folds.len());
    let mut runs: Vec<Result<FoldRun>> = Vec::with_capacity(folds.len());
    if threads == 1 {
        runs.extend(folds.iter().map(|&f| train_fold(config, &ds, &manifest, f)));
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let (ds, manifest, folds) = (&ds, &manifest, &folds);
                    scope.spawn(move || {
                        folds
                            .iter()
                            .skip(t)
                            .step_by(threads)
                            .map(|&f| train_fold(config, ds, manifest, f))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                runs.extend(h.join().expect("fold worker panicked"));
            }
        });
        runs.sort_by_key(|r| r.as_ref().map_or(usize::MAX, |r| r.fold));
    }

    let mut summary = Vec::new();
    for run in runs {
        let run = run?;
        run.file.write(&out_dir.join(checkpoint_file(run.fold)))?;
        write_train_log(&out_dir.join(format!("fold{}.train.csv", run.fold)), &run.history)?;
        write_val_log(&out_dir.join(format!("fold{}.val.csv", run.fold)), &run.history)?;
        let m = &run.file.meta;
        let mut line = format!(
            "fold {}: seed {} best stage {} epoch {} val accuracy {:.4} weighted-F1 {:.4}",
            run.fold, run.file.config.seed, m.stage, m.epoch, m.val_accuracy, m.val_weighted_f1
        );
        if let Some(stage) = run.aborted {
            line.push_str(&format!(" (stage {stage} stopped on a non-finite value)"));
        }
        summary.push(line);
    }
    Ok(summary.join("\n"))
}

/// Checkpoints in `dir` named `fold{i}.ckpt`, ordered by fold.
pub fn discover_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for e in entries {
        let path = e.map_err(|e| CliError::io(dir, e))?.path();
        let fold = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("fold")?.strip_suffix(".ckpt")?.parse().ok());
        if let Some(f) = fold {
            found.push((f, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Usage(format!("no fold*.ckpt files in {}", dir.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Rows of `dataset` to predict: all of them, or the validation side of one fold.
pub fn select_samples(ds: &Dataset, fold: Option<(usize, &Manifest)>) -> Result<Vec<usize>> {
    match fold {
        None => Ok((0..ds.len()).collect()),
        Some((f, manifest)) => Ok(fold_train_val(&manifest.to_plan()?, ds, f)?.1),
    }
}

/// Averaged multi-view probabilities of every checkpoint on the selected rows.
pub fn predict(
    config: &RunConfig,
    checkpoints: &[PathBuf],
    dataset: &Path,
    fold: Option<(usize, &Path)>,
    out: &Path,
) -> Result<String> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("no checkpoints given".into()));
    }
    let ds = read_dataset(dataset)?;
    let manifest = fold.map(|(_, p)| Manifest::read(p)).transpose()?;
    let rows = select_samples(&ds, fold.zip(manifest.as_ref()).map(|((f, _), m)| (f, m)))?;
    let inputs = ds.feature_matrix(&rows)?;

    let mut per_model: Vec<Matrix> = Vec::with_capacity(checkpoints.len());
    for (m, path) in checkpoints.iter().enumerate() {
        let ckpt = CheckpointFile::read(path)?;
        if ckpt.params.input_dim() != ds.dim() || ckpt.params.n_classes() != ds.n_classes() {
            return Err(CliError::Usage(format!(
                "{} expects {} features and {} classes",
                path.display(),
                ckpt.params.input_dim(),
                ckpt.params.n_classes()
            )));
        }
        let p = predict_proba(
            &ckpt.params,
            &inputs,
            config.predict.views,
            config.predict.jitter,
            config.predict_seed(m),
        )?;
        if !p.is_finite() {
            return Err(CliError::Failed(format!("{} produced non-finite probabilities", path.display())));
        }
        per_model.push(p);
    }
    let table = ConfidenceTable {
        sample_ids: rows.clone(),
        n_classes: ds.n_classes(),
        n_models: per_model.len(),
        probs: (0..rows.len())
            .map(|i| per_model.iter().map(|p| p.row(i).to_vec()).collect())
            .collect(),
    };
    table.write(out)?;
    Ok(format!(
        "{}: {} samples x {} models, views {} jitter {} (seeds derived from root seed {})",
        out.display(),
        rows.len(),
        per_model.len(),
        config.predict.views,
        config.predict.jitter,
        config.seed
    ))
}

/// Decisions for every threshold in `config.ensemble.thetas`, one file each,
/// plus a rule-usage table.
pub fn ensemble(config: &RunConfig, confidences: &Path, out_dir: &Path) -> Result<String> {
    ensure_dir(out_dir)?;
    let table = ConfidenceTable::read(confidences)?;
    let samples = table.model_confidences()?;
    let mut stats = vec![vec![
        "theta".to_owned(),
        "samples".to_owned(),
        "max_vote".to_owned(),
        "harmonic".to_owned(),
        "max_vote_fraction".to_owned(),
        "harmonic_fraction".to_owned(),
    ]];
    let mut summary = Vec::new();
    for &theta in &config.ensemble.thetas {
        let cfg = hetloss_core::EnsembleConfig {
            theta,
            epsilon_clamp: config.ensemble.epsilon_clamp,
        };
        let b = batch_decide(&samples, &cfg)?;
        write_decisions(&out_dir.join(decisions_file(theta)), &table.sample_ids, &b.decisions)?;
        stats.push(vec![
            theta.to_string(),
            b.decisions.len().to_string(),
            b.count(Rule::MaxVote).to_string(),
            b.count(Rule::Harmonic).to_string(),
            b.max_vote_fraction.to_string(),
            b.harmonic_fraction.to_string(),
        ]);
        summary.push(format!(
            "theta {theta}: {} samples, max-vote {:.4}, harmonic {:.4}",
            b.decisions.len(),
            b.max_vote_fraction,
            b.harmonic_fraction
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &stats {
        w.write_record(row).map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    crate::formats::write_file(&out_dir.join(ENSEMBLE_STATS), &bytes)?;
    Ok(summary.join("\n"))
}

fn argmax(p: &[f64]) -> (usize, f64) {
    let mut best = (0, p[0]);
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Builds the metrics report: every ensemble decision file in full, then per
/// model the full set and one high-confidence subset row per threshold.
pub fn eval_rows(
    config: &RunConfig,
    ds: &Dataset,
    confidences: &ConfidenceTable,
    decisions: &[(f64, Vec<(usize, hetloss_core::Decision)>)],
) -> Result<Vec<MetricsRow>> {
    let n_c = ds.n_classes();
    let truth = |id: usize| -> Result<usize> {
        if id < ds.len() {
            Ok(ds.sample(id).class)
        } else {
            Err(hetloss_core::Error::IndexOutOfRange { index: id, len: ds.len() }.into())
        }
    };
    let mut rows = Vec::new();
    for (theta, decided) in decisions {
        let preds: Vec<usize> = decided.iter().map(|(_, d)| d.class).collect();
        let truths: Vec<usize> = decided.iter().map(|&(id, _)| truth(id)).collect::<Result<_>>()?;
        rows.push(MetricsRow {
            split: format!("ensemble@{theta}"),
            result: Some(weighted_f1(&preds, &truths, n_c)?),
            support: preds.len(),
            fraction: 1.0,
        });
    }
    let truths: Vec<usize> = confidences
        .sample_ids
        .iter()
        .map(|&id| truth(id))
        .collect::<Result<_>>()?;
    for m in 0..confidences.n_models {
        let (preds, confs): (Vec<usize>, Vec<f64>) = confidences.probs.iter().map(|p| argmax(&p[m])).unzip();
        rows.push(MetricsRow {
            split: format!("model{m}"),
            result: Some(weighted_f1(&preds, &truths, n_c)?),
            support: preds.len(),
            fraction: 1.0,
        });
        for &theta in &config.ensemble.thetas {
            let s = high_confidence_subset_eval(&preds, &confs, &truths, n_c, theta)?;
            rows.push(MetricsRow {
                split: format!("model{m}>{theta}"),
                result: s.result,
                support: s.count,
                fraction: s.fraction,
            });
        }
    }
    Ok(rows)
}

pub fn eval(config: &RunConfig, dataset: &Path, confidences: &Path, decisions_dir: &Path, out_dir: &Path) -> Result<String> {
    ensure_dir(out_dir)?;
    let ds = read_dataset(dataset)?;
    let table = ConfidenceTable::read(confidences)?;
    let mut decisions = Vec::new();
    for &theta in &config.ensemble.thetas {
        decisions.push((theta, read_decisions(&decisions_dir.join(decisions_file(theta)))?));
    }
    let rows = eval_rows(config, &ds, &table, &decisions)?;
    write_metrics_csv(&out_dir.join(METRICS_CSV), &rows, ds.n_classes())?;
    let text = metrics_table(&rows, ds.n_classes());
    crate::formats::write_file(&out_dir.join(METRICS_TXT), text.as_bytes())?;
    Ok(text.trim_end().to_owned())
}
