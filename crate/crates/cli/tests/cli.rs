use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use hetloss::commands::checkpoint_file;
use hetloss::formats::checkpoint::CheckpointFile;
use hetloss::formats::dataset::read_dataset;
use hetloss::formats::manifest::Manifest;
use hetloss::formats::tables::{read_decisions, ConfidenceTable};
use hetloss::verify::ensemble_oracle;
use hetloss_core::{fold_train_val, high_confidence_subset_eval, weighted_f1};

const BIN: &str = env!("CARGO_BIN_EXE_hetloss");

const SMALL: &str = "seed = 5\n\
[gen]\nsubjects_per_class = [10, 8]\nmax_images = 120\n\
[holdout]\nsubjects_per_class = [3, 3]\n\
[train]\nstage1_max_epochs = 3\nstage2_max_epochs = 1\nhidden = [8]\nfeature_dim = 4\n";

fn hetloss(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hetloss(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

/// A trained small pipeline, shared by the tests that only read it.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = fresh_dir("pipeline");
        let cfg = write_config(&dir, SMALL);
        for step in ["gen", "split", "train", "predict", "ensemble", "eval"] {
            ok(&dir, &[step, "--config", &cfg]);
        }
        dir
    })
}

#[test]
fn infeasible_generator_config_exits_1_naming_the_field() {
    let dir = fresh_dir("bad-gen");
    let cfg = write_config(&dir, "[gen]\nmin_images = 500\nmax_images = 400\n");
    let out = hetloss(&dir, &["gen", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gen.max_images"), "{err}");
    assert!(!dir.join("dataset.txt").exists());
}

#[test]
fn unknown_key_and_stage_seed_are_config_errors() {
    let dir = fresh_dir("bad-keys");
    for (text, field) in [("[train]\nlr = 0.1\n", "lr"), ("[train]\nseed = 1\n", "train.seed")] {
        let cfg = write_config(&dir, text);
        let out = hetloss(&dir, &["gen", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains(field));
    }
}

#[test]
fn too_many_folds_names_the_class() {
    let dir = fresh_dir("big-k");
    let cfg = write_config(&dir, "[gen]\nsubjects_per_class = [9, 4]\n[split]\nk = 5\n");
    ok(&dir, &["gen", "--config", &cfg]);
    let out = hetloss(&dir, &["split", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("class 1 has 4 subjects"), "{err}");
}

#[test]
fn train_without_manifest_fails() {
    let dir = fresh_dir("no-manifest");
    let cfg = write_config(&dir, SMALL);
    ok(&dir, &["gen", "--config", &cfg]);
    let out = hetloss(&dir, &["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("folds.toml"));
    assert!(!dir.join(checkpoint_file(0)).exists());
}

#[test]
fn same_seed_same_bytes_for_gen_and_split() {
    let (a, b) = (fresh_dir("same-a"), fresh_dir("same-b"));
    for dir in [&a, &b] {
        ok(dir, &["gen", "--seed", "3"]);
        ok(dir, &["split", "--seed", "3"]);
    }
    for f in ["dataset.txt", "truth.toml", "test.txt", "test_truth.toml", "folds.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = fresh_dir("same-c");
    ok(&c, &["gen", "--seed", "4"]);
    assert_ne!(std::fs::read(a.join("dataset.txt")).unwrap(), std::fs::read(c.join("dataset.txt")).unwrap());
}

#[test]
fn seven_checkpoints_give_seven_rows_per_sample() {
    let dir = pipeline();
    let t = ConfidenceTable::read(&dir.join("confidences.csv")).unwrap();
    let test = read_dataset(&dir.join("test.txt")).unwrap();
    assert_eq!(t.n_models, 7);
    assert_eq!(t.sample_ids, (0..test.len()).collect::<Vec<_>>());
    assert!(t.probs.iter().all(|s| s.len() == 7));
}

#[test]
fn single_clean_view_matches_forward() {
    let dir = pipeline();
    let out = dir.join("plain.csv");
    let ckpt = dir.join(checkpoint_file(3));
    ok(
        dir,
        &[
            "predict",
            "--views",
            "1",
            "--jitter",
            "0",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    let t = ConfidenceTable::read(&out).unwrap();
    let test = read_dataset(&dir.join("test.txt")).unwrap();
    let params = CheckpointFile::read(&ckpt).unwrap().params;
    let idx: Vec<usize> = (0..test.len()).collect();
    let p = params.forward(&test.feature_matrix(&idx).unwrap()).unwrap().probabilities;
    for i in idx {
        // the CSV holds the shortest round-tripping decimal, so equality is exact
        assert_eq!(t.probs[i][0], p.row(i));
    }
}

#[test]
fn fold_prediction_covers_exactly_the_validation_subjects() {
    let dir = pipeline();
    let out = dir.join("val2.csv");
    ok(dir, &["predict", "--fold", "2", "--out", out.to_str().unwrap()]);
    let ds = read_dataset(&dir.join("dataset.txt")).unwrap();
    let plan = Manifest::read(&dir.join("folds.toml")).unwrap().to_plan().unwrap();
    let (_, val) = fold_train_val(&plan, &ds, 2).unwrap();
    assert_eq!(ConfidenceTable::read(&out).unwrap().sample_ids, val);
}

#[test]
fn ensemble_decisions_match_the_written_rule() {
    let dir = pipeline();
    let t = ConfidenceTable::read(&dir.join("confidences.csv")).unwrap();
    for theta in [0.95, 0.98] {
        let d = read_decisions(&dir.join(format!("decisions_theta{theta}.csv"))).unwrap();
        assert_eq!(d.len(), t.sample_ids.len());
        for ((id, got), (sid, models)) in d.iter().zip(t.sample_ids.iter().zip(&t.probs)) {
            assert_eq!(id, sid);
            let (class, conf, rule) = ensemble_oracle(models, theta, 1e-6);
            assert_eq!((got.class, got.rule), (class, rule));
            assert!((got.confidence - conf).abs() <= 1e-12 * conf);
        }
    }
    let stats = std::fs::read_to_string(dir.join("ensemble_stats.csv")).unwrap();
    assert!(stats.starts_with("theta,samples,max_vote,harmonic"));
    assert_eq!(stats.lines().count(), 3);
}

#[test]
fn eval_matches_direct_metric_calls() {
    let dir = pipeline();
    let test = read_dataset(&dir.join("test.txt")).unwrap();
    let t = ConfidenceTable::read(&dir.join("confidences.csv")).unwrap();
    let truths = test.labels(&t.sample_ids);
    let mut rdr = csv::Reader::from_path(dir.join("metrics.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let find = |split: &str| rows.iter().find(|r| &r[0] == split).unwrap_or_else(|| panic!("{split}"));

    let d = read_decisions(&dir.join("decisions_theta0.95.csv")).unwrap();
    let preds: Vec<usize> = d.iter().map(|(_, x)| x.class).collect();
    let e = weighted_f1(&preds, &truths, 2).unwrap();
    assert_eq!(find("ensemble@0.95")[2].parse::<f64>().unwrap(), e.weighted_f1);

    let (preds, confs): (Vec<usize>, Vec<f64>) = t
        .probs
        .iter()
        .map(|s| if s[4][1] > s[4][0] { (1, s[4][1]) } else { (0, s[4][0]) })
        .unzip();
    let full = weighted_f1(&preds, &truths, 2).unwrap();
    assert_eq!(find("model4")[1].parse::<f64>().unwrap(), full.accuracy);
    let sub = high_confidence_subset_eval(&preds, &confs, &truths, 2, 0.98).unwrap();
    let row = find("model4>0.98");
    assert_eq!(row[5].parse::<usize>().unwrap(), sub.count);
    match sub.result {
        Some(r) => assert_eq!(row[2].parse::<f64>().unwrap(), r.weighted_f1),
        None => assert_eq!(&row[2], ""),
    }
    assert!(std::fs::read_to_string(dir.join("metrics.txt")).unwrap().contains("ensemble@0.98"));
}

#[test]
fn verify_passes_and_reports_an_injected_fault_by_name() {
    let dir = fresh_dir("verify");
    let clean = hetloss(&dir, &["verify"]);
    assert!(clean.status.success());
    assert_eq!(String::from_utf8_lossy(&clean.stdout).matches("PASS").count(), 6);

    let out = hetloss(&dir, &["verify", "--inject-fault", "layer1.weight"]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL gradients"), "{text}");
    assert!(text.contains("group layer1.weight"), "{text}");
    assert!(!text.contains("group head.weight"), "{text}");
}
