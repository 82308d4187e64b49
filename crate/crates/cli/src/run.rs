//! `train` and `eval`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use skd_core::analysis::{export_logits, MetricsLog, MetricsRow};
use skd_core::checkpoint::Checkpoint;
use skd_core::data::{load_dataset, LabeledImageDataset, Split};
use skd_core::train::{build_network, evaluate_network, restore_network, Trainer};
use skd_core::Error;

use crate::config::{self, ResolvedRun, RESOLVED_CONFIG_FILE};
use crate::exit::DuplicateRun;
use crate::manifest::*;

pub const DATA_ROOT_ENV: &str = "SKD_DATA_ROOT";

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

pub fn load_data(run: &ResolvedRun) -> anyhow::Result<LabeledImageDataset> {
    let root = data_root();
    load_dataset(&run.file.dataset, &root, run.file.dataset_seed)
        .with_context(|| format!("loading `{}` (dataset root comes from {DATA_ROOT_ENV})", run.file.dataset))
}

fn write_metrics(log: &MetricsLog, dir: &Path, file: &str) -> anyhow::Result<()> {
    let tmp = dir.join(format!("{file}.tmp"));
    log.write_csv(&tmp)?;
    fs::rename(&tmp, dir.join(file)).with_context(|| format!("finalizing {}", dir.join(file).display()))
}

/// What `train` produced.
#[derive(Debug)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub final_test_top1: f64,
}

pub fn train(run: &ResolvedRun, force: bool) -> anyhow::Result<TrainSummary> {
    let dir = run.run_dir();
    if !force {
        if let Ok(existing) = RunManifest::load(&dir) {
            if existing.status == RunStatus::Completed {
                return Err(DuplicateRun(format!(
                    "{} already holds a completed run with this configuration; pass --force to repeat it",
                    dir.display()
                ))
                .into());
            }
        }
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    skd_core::checkpoint::write_atomic(&dir.join(RESOLVED_CONFIG_FILE), run.to_toml().as_bytes())?;

    let data = load_data(run)?;
    let mut manifest = RunManifest {
        run_id: run.run_id(),
        config_hash: run.config_hash(),
        version: version(),
        status: RunStatus::Running,
        started_unix: now_unix(),
        finished_unix: None,
        epochs_completed: 0,
        final_test_top1: None,
        error: None,
        seeds: Seeds {
            init: run.training.seed,
            shuffle: run.training.batch.shuffle_seed,
            augmentation: run.training.seed,
            dataset: run.file.dataset_seed,
        },
        dataset: DatasetStats::of(&data),
        artifacts: vec![RESOLVED_CONFIG_FILE.into(), MANIFEST_FILE.into(), METRICS_FILE.into()],
    };
    manifest.save(&dir)?;

    let mut training = run.training.clone();
    if run.file.augment {
        training.augmentation = Some(data.default_policy());
    }
    let network = build_network(&run.file.model, data.num_classes, data.train.channels, &training)?;
    let mut trainer = Trainer::new(network, training)?;
    let result = (|| -> anyhow::Result<()> {
        while trainer.state().epoch < trainer.config().epochs {
            let report = trainer.run_epoch(&data)?;
            write_metrics(trainer.log(), &dir, METRICS_FILE)?;
            eprintln!(
                "epoch {:>3}/{}  train loss {:.4}  train top-1 {:.2}%  test top-1 {:.2}%  variance {:.4}",
                report.test.epoch,
                trainer.config().epochs,
                report.train.mean_loss,
                report.train.top1_accuracy * 100.0,
                report.test.top1_accuracy * 100.0,
                report.test.ranked_output_variance,
            );
        }
        Ok(())
    })();
    manifest.epochs_completed = trainer.state().epoch;
    if let Err(err) = result {
        let diverged = matches!(err.downcast_ref::<Error>(), Some(Error::Divergence { .. }));
        if diverged {
            // parameters are still those before the failing update
            trainer.checkpoint(&manifest.config_hash).save(&dir.join(DIVERGED_CHECKPOINT_DIR))?;
            manifest.artifacts.push(DIVERGED_CHECKPOINT_DIR.into());
        }
        write_metrics(trainer.log(), &dir, METRICS_FILE)?;
        manifest.status = if diverged { RunStatus::Diverged } else { RunStatus::Failed };
        manifest.error = Some(format!("{err:#}"));
        manifest.finished_unix = Some(now_unix());
        manifest.save(&dir)?;
        return Err(err.context(format!("run {} stopped", dir.display())));
    }

    trainer.checkpoint(&manifest.config_hash).save(&dir.join(CHECKPOINT_DIR))?;
    let batch = trainer.config().batch.batch_size;
    export_logits(trainer.network_mut(), &data.test, &dir.join(LOGITS_FILE), batch)?;
    let top1 = trainer.log().last("test").map(|r| r.top1_accuracy).unwrap_or(f64::NAN);
    manifest.artifacts.extend([CHECKPOINT_DIR.into(), LOGITS_FILE.into()]);
    manifest.status = RunStatus::Completed;
    manifest.final_test_top1 = Some(top1);
    manifest.finished_unix = Some(now_unix());
    manifest.save(&dir)?;
    Ok(TrainSummary { run_dir: dir, final_test_top1: top1 })
}

/// The row `eval` reports and appends.
#[derive(Debug)]
pub struct EvalSummary {
    pub row: MetricsRow,
    pub log_path: PathBuf,
}

/// Evaluates the checkpoint in `run_dir` (or `checkpoint`) on one split of the run's dataset.
pub fn eval(
    run_dir: &Path,
    checkpoint: Option<&Path>,
    config_path: Option<&Path>,
    split: Split,
) -> anyhow::Result<EvalSummary> {
    let config_path = config_path.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join(RESOLVED_CONFIG_FILE));
    let run = config::load_resolved(&config_path, None, None)?;
    let ckpt_dir = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join(CHECKPOINT_DIR));
    if !ckpt_dir.join(skd_core::checkpoint::MANIFEST_FILE).exists() {
        bail!(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no checkpoint at {} (expected {})", ckpt_dir.display(), skd_core::checkpoint::MANIFEST_FILE)
        ));
    }
    let ckpt = Checkpoint::load(&ckpt_dir)?;
    let data = load_data(&run)?;
    if ckpt.manifest.num_classes != data.num_classes {
        return Err(anyhow::Error::new(Error::ClassCountMismatch {
            left: ckpt.manifest.num_classes,
            right: data.num_classes,
        })
        .context(format!(
            "checkpoint has {} classes but `{}` has {}",
            ckpt.manifest.num_classes, data.name, data.num_classes
        )));
    }
    if ckpt.manifest.in_channels != data.train.channels {
        bail!(Error::ShapeMismatch {
            expected: format!("{} input channels", ckpt.manifest.in_channels),
            actual: format!("{} in `{}`", data.train.channels, data.name),
        });
    }
    let mut network = restore_network(&ckpt)?;
    let dataset = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let e = evaluate_network(&mut network, dataset, run.file.batch_size, run.training.variance_space)?;
    let row = MetricsRow {
        epoch: ckpt.manifest.epoch,
        split: split.as_str().into(),
        top1_accuracy: e.top1_accuracy,
        mean_loss: e.mean_loss,
        ranked_output_variance: e.variance.mean,
        seconds_per_iteration: 0.0,
        learning_rate: 0.0,
    };

    let log_dir = ckpt_dir.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let log_path = log_dir.join(EVAL_FILE);
    let mut log = if log_path.exists() { MetricsLog::read_csv(&log_path)? } else { MetricsLog::new() };
    match log.rows().iter().find(|r| r.epoch == row.epoch && r.split == row.split) {
        // evaluation is deterministic, so a repeat must agree with the stored row
        Some(existing) if *existing == row => {}
        Some(existing) => bail!(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!(
                "{} already records top-1 {} for epoch {} ({}), this evaluation gives {}",
                log_path.display(),
                existing.top1_accuracy,
                row.epoch,
                row.split,
                row.top1_accuracy
            )
        )),
        None => {
            log.push(row.clone())?;
            write_metrics(&log, &log_dir, EVAL_FILE)?;
        }
    }
    Ok(EvalSummary { row, log_path })
}
