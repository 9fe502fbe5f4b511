use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetloss::commands::{self, FoldSel};
use hetloss::{verify, CliError, Overrides, Result, RunConfig};

/// Subject-aware classifier pipeline on synthetic heterogeneous data.
#[derive(Parser, Debug)]
#[command(name = "hetloss", version)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Ensemble threshold; repeat for several.
    #[arg(long = "theta", global = true)]
    thetas: Vec<f64>,

    /// Prediction views per sample.
    #[arg(long, global = true)]
    views: Option<usize>,

    /// Standard deviation of the per-view input noise.
    #[arg(long, global = true)]
    jitter: Option<f64>,

    /// Directory for outputs, and for inputs not given explicitly.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Gen,
    /// Assign subjects to stratified folds.
    Split {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one model per fold.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Fold index or `all`.
        #[arg(long, default_value = "all")]
        fold: FoldSel,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Write per-model class probabilities.
    Predict {
        /// Checkpoint file; repeat for several. Defaults to every fold*.ckpt in the output directory.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Defaults to test.txt when present, else dataset.txt.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Predict only the validation subjects of this fold.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine per-model probabilities into one decision per sample.
    Ensemble {
        #[arg(long)]
        confidences: Option<PathBuf>,
    },
    /// Score ensemble decisions and single models.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        confidences: Option<PathBuf>,
    },
    /// Run the property suite.
    Verify {
        /// Corrupt the analytic gradient of this parameter group.
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

fn or_default(p: Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    p.unwrap_or_else(|| dir.join(name))
}

fn default_eval_dataset(dir: &Path) -> PathBuf {
    let test = dir.join(commands::TEST_FILE);
    if test.exists() {
        test
    } else {
        dir.join(commands::DATASET_FILE)
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let dir = g.out_dir.as_path();
    if let Command::Verify { inject_fault } = &cli.command {
        let mut failed = false;
        for check in verify::run_all(inject_fault.as_deref()) {
            println!("{check}");
            failed |= !check.passed;
        }
        return if failed {
            Err(CliError::Failed("verification failed".into()))
        } else {
            Ok(())
        };
    }

    let overrides = Overrides {
        seed: g.seed,
        thetas: g.thetas,
        views: g.views,
        jitter: g.jitter,
    };
    let config = RunConfig::load(g.config.as_deref(), &overrides)?;
    let summary = match cli.command {
        Command::Gen => commands::gen(&config, dir)?,
        Command::Split { dataset } => {
            commands::split(&config, &or_default(dataset, dir, commands::DATASET_FILE), dir)?
        }
        Command::Train {
            dataset,
            manifest,
            fold,
            threads,
        } => commands::train(
            &config,
            &or_default(dataset, dir, commands::DATASET_FILE),
            &or_default(manifest, dir, commands::MANIFEST_FILE),
            fold,
            threads,
            dir,
        )?,
        Command::Predict {
            checkpoints,
            dataset,
            fold,
            manifest,
            out,
        } => {
            let checkpoints = if checkpoints.is_empty() {
                commands::discover_checkpoints(dir)?
            } else {
                checkpoints
            };
            let dataset = match (dataset, fold) {
                (Some(d), _) => d,
                (None, Some(_)) => dir.join(commands::DATASET_FILE),
                (None, None) => default_eval_dataset(dir),
            };
            let manifest = or_default(manifest, dir, commands::MANIFEST_FILE);
            commands::predict(
                &config,
                &checkpoints,
                &dataset,
                fold.map(|f| (f, manifest.as_path())),
                &or_default(out, dir, commands::CONFIDENCE_FILE),
            )?
        }
        Command::Ensemble { confidences } => {
            commands::ensemble(&config, &or_default(confidences, dir, commands::CONFIDENCE_FILE), dir)?
        }
        Command::Eval { dataset, confidences } => commands::eval(
            &config,
            &dataset.unwrap_or_else(|| default_eval_dataset(dir)),
            &or_default(confidences, dir, commands::CONFIDENCE_FILE),
            dir,
            dir,
        )?,
        Command::Verify { .. } => unreachable!("handled above"),
    };
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
