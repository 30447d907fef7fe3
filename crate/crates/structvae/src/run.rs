//! Training driver: data loading, the epoch loop, evaluation cadence,
//! checkpoints and the metrics log.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use structvae_core::data::Dataset;
use structvae_core::eval::classification_error;
use structvae_core::train::Trainer;
use structvae_core::Error as CoreError;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::failure::Failure;
use crate::idx::load_idx;
use crate::metrics::{append_row, truncate_after, EpochAccumulator, MetricsRow};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SNAPSHOT_FILE: &str = "config.resolved";

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue from `<out>/checkpoint.bin` if it exists.
    pub resume: bool,
    /// Stop once this many total steps have been taken.
    pub stop_after: Option<u64>,
    /// Record elapsed seconds in metrics rows.
    pub wall_clock: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub step: u64,
    pub last_row: Option<MetricsRow>,
    pub out: PathBuf,
}

pub fn load_split(cfg: &RunConfig, images: &'static str, labels: &'static str, limit: Option<usize>) -> Result<Dataset, Failure> {
    let data = load_idx(cfg.path(images)?, cfg.path(labels)?).map_err(Failure::data)?;
    match limit {
        Some(n) => data.head(n).map_err(Failure::data),
        None => Ok(data),
    }
}

pub fn load_train(cfg: &RunConfig) -> Result<Dataset, Failure> {
    load_split(cfg, "images", "labels", cfg.train_limit)
}

pub fn load_test(cfg: &RunConfig) -> Result<Dataset, Failure> {
    load_split(cfg, "test_images", "test_labels", cfg.test_limit)
}

fn checkpoint_of(trainer: &Trainer, cfg: &RunConfig, acc: EpochAccumulator) -> Checkpoint {
    Checkpoint {
        config_hash: cfg.hash(),
        config_text: cfg.to_text(),
        model: trainer.model().clone(),
        adam: trainer.adam().clone(),
        step: trainer.step(),
        epoch_acc: acc,
    }
}

fn numerical(e: CoreError) -> Failure {
    match e {
        CoreError::NonFiniteLoss { .. }
        | CoreError::NonFiniteGradient { .. }
        | CoreError::Domain { .. } => {
            Failure::numerical(e)
        }
        other => Failure::other(other),
    }
}

/// Runs (or resumes) training as configured. Every path is checked before
/// any data is read.
pub fn train(cfg: &RunConfig, opts: RunOptions) -> Result<RunSummary, Failure> {
    cfg.validate()?;
    let out = cfg.path("out")?.to_owned();
    cfg.check_data(&["images", "labels", "test_images", "test_labels"])?;
    fs::create_dir_all(&out).map_err(|e| Failure::config(format!("{}: {e}", out.display())))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);

    let train_set = load_train(cfg)?;
    let test_set = load_test(cfg)?;

    let (mut trainer, mut acc) = if opts.resume && ckpt_path.exists() {
        let c = load_checkpoint(&ckpt_path)?;
        c.ensure_compatible(cfg)?;
        truncate_after(&metrics_path, c.step).map_err(Failure::other)?;
        let trainer = Trainer::resume(cfg.train, &train_set, c.model, c.adam, c.step)
            .map_err(|e| Failure::checkpoint(format!("{}: {e}", ckpt_path.display())))?;
        (trainer, c.epoch_acc)
    } else {
        if metrics_path.exists() {
            fs::remove_file(&metrics_path).map_err(Failure::other)?;
        }
        let trainer = Trainer::new(cfg.train, &train_set).map_err(Failure::config)?;
        (trainer, EpochAccumulator::default())
    };
    fs::write(out.join(SNAPSHOT_FILE), cfg.to_text()).map_err(Failure::other)?;

    let per_epoch = trainer.steps_per_epoch();
    let mut end = trainer.total_steps();
    if let Some(s) = opts.stop_after {
        end = end.min(s);
    }
    let started = Instant::now();
    let mut last_row = None;
    let mut saved_at = None;
    while trainer.step() < end {
        match trainer.train_step(&train_set) {
            Ok(b) => acc.add(&b),
            Err(e) => {
                // the trainer is unchanged by a failed step, so this is the
                // last good state
                save_checkpoint(&checkpoint_of(&trainer, cfg, acc), &ckpt_path)?;
                return Err(numerical(e));
            }
        }
        let step = trainer.step();
        if step % per_epoch == 0 {
            let err = classification_error(trainer.model(), &test_set).map_err(Failure::other)?;
            let mut row = MetricsRow::new(step, step / per_epoch, &acc.mean(), err);
            if opts.wall_clock {
                row.seconds = Some(started.elapsed().as_secs_f64());
            }
            append_row(&metrics_path, &row).map_err(Failure::other)?;
            eprintln!(
                "epoch {} step {step} loss {:.3} test_error_pct {err:.2} ({:.0}s)",
                row.epoch,
                row.total,
                started.elapsed().as_secs_f64()
            );
            acc = EpochAccumulator::default();
            save_checkpoint(&checkpoint_of(&trainer, cfg, acc), &ckpt_path)?;
            saved_at = Some(step);
            last_row = Some(row);
        }
    }
    if saved_at != Some(trainer.step()) {
        save_checkpoint(&checkpoint_of(&trainer, cfg, acc), &ckpt_path)?;
    }
    Ok(RunSummary {
        step: trainer.step(),
        last_row,
        out,
    })
}

/// `<out>/checkpoint.bin` unless a path is given.
pub fn checkpoint_path(explicit: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    match explicit {
        Some(p) => Ok(p.to_owned()),
        None => Ok(cfg.path("out")?.join(CHECKPOINT_FILE)),
    }
}
