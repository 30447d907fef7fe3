//! Subcommands of the `structvae` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use structvae_core::eval::{
    analogy_consistency, analogy_grid, classification_error, style_sweep_grid, sweep_consistency,
};
use structvae_core::gradcheck::{model_check, op_suite};
use structvae_core::{EstimatorMode, OpKind};

use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::failure::Failure;
use crate::pgm::write_pgm;
use crate::run::{self, checkpoint_path, RunOptions};

/// Largest relative error a finite-difference check may show and still pass.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "structvae", version, about = "Semi-supervised structured VAE on MNIST")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, writing metrics, checkpoints and a config snapshot to the output directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total optimisation steps.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Record elapsed seconds in the metrics log (makes logs run-dependent).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Print the test classification error of a checkpoint as `test_error_pct=<float>`.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write `analogies.pgm`: each seed image followed by its style rendered with every label.
    Analogies {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of seed images, taken from the start of the test set.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Write `sweep_<k>.pgm`: label k decoded over a grid of 2-D styles.
    Stylesweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        grid: usize,
        #[arg(long, default_value_t = 2.0)]
        range: f64,
        /// Label to sweep; every label when omitted.
        #[arg(long)]
        label: Option<usize>,
    },
    /// Run the finite-difference gradient checks and print the worst relative error per op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

/// Flags that override keys of the `--config` file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub labels_per_class: Option<usize>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Classifier weight, or `auto` for 0.1 × training size / labelled count.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long, value_parser = ["marginalize", "plugin"])]
    pub estimator: Option<String>,
    #[arg(long)]
    pub style_dim: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on the first n training examples only.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Evaluate on the first n test examples only.
    #[arg(long)]
    pub test_limit: Option<usize>,
}

impl ConfigArgs {
    fn file_text(&self) -> Result<Option<String>, Failure> {
        match &self.config {
            Some(p) => fs::read_to_string(p)
                .map(Some)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display()))),
            None => Ok(None),
        }
    }

    fn overrides(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("images", path(&self.images)),
            ("labels", path(&self.labels)),
            ("test_images", path(&self.test_images)),
            ("test_labels", path(&self.test_labels)),
            ("out", path(&self.out)),
            ("labels_per_class", self.labels_per_class.map(|v| v.to_string())),
            ("rate", self.rate.map(|v| format!("{v:?}"))),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| format!("{v:?}"))),
            ("alpha", self.alpha.clone()),
            ("estimator", self.estimator.clone()),
            ("style_dim", self.style_dim.map(|v| v.to_string())),
            ("hidden_width", self.hidden_width.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("train_limit", self.train_limit.map(|v| v.to_string())),
            ("test_limit", self.test_limit.map(|v| v.to_string())),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    /// `base`, then the config file, then flags.
    pub fn resolve(&self, mut base: RunConfig) -> Result<RunConfig, Failure> {
        if let Some(text) = self.file_text()? {
            base.apply_text(&text)?;
        }
        for (key, value) in self.overrides() {
            base.set(key, &value)?;
        }
        Ok(base)
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            resume,
            stop_after,
            wall_clock,
        } => {
            let cfg = config.resolve(RunConfig::default())?;
            let summary = run::train(
                &cfg,
                RunOptions {
                    resume,
                    stop_after,
                    wall_clock,
                },
            )?;
            if let Some(row) = summary.last_row {
                println!("test_error_pct={}", row.test_error_pct);
            }
            println!("step={}", summary.step);
            Ok(())
        }
        Command::Eval { config, checkpoint } => {
            let (cfg, ckpt) = open_checkpoint(&config, checkpoint.as_deref())?;
            cfg.check_data(&["test_images", "test_labels"])?;
            let test = run::load_test(&cfg)?;
            let err = classification_error(&ckpt.model, &test).map_err(Failure::other)?;
            println!("test_error_pct={err}");
            Ok(())
        }
        Command::Analogies {
            config,
            checkpoint,
            count,
        } => {
            let (cfg, ckpt) = open_checkpoint(&config, checkpoint.as_deref())?;
            let out = cfg.path("out")?.to_owned();
            cfg.check_data(&["test_images", "test_labels"])?;
            let test = run::load_test(&cfg)?;
            if count == 0 || count > test.len() {
                return Err(Failure::config(format!(
                    "--count must be between 1 and {}",
                    test.len()
                )));
            }
            let idx: Vec<usize> = (0..count).collect();
            let seeds = test.images.select_rows(&idx).map_err(Failure::other)?;
            let grid = analogy_grid(&ckpt.model, &seeds).map_err(Failure::dimension)?;
            write_into(&out, "analogies.pgm", &grid)?;
            let c = analogy_consistency(&ckpt.model, &grid).map_err(Failure::other)?;
            println!("analogy_consistency={c}");
            Ok(())
        }
        Command::Stylesweep {
            config,
            checkpoint,
            grid,
            range,
            label,
        } => {
            let (cfg, ckpt) = open_checkpoint(&config, checkpoint.as_deref())?;
            let out = cfg.path("out")?.to_owned();
            let spec = *ckpt.model.spec();
            if spec.style_dim != 2 {
                return Err(Failure::dimension(format!(
                    "style sweep needs a 2-dimensional style, checkpoint has {}",
                    spec.style_dim
                )));
            }
            if grid == 0 || !(range.is_finite() && range > 0.0) {
                return Err(Failure::config("--grid must be positive and --range finite and positive"));
            }
            let labels: Vec<usize> = match label {
                Some(k) if k >= spec.num_classes => {
                    return Err(Failure::config(format!(
                        "--label {k} out of range for {} classes",
                        spec.num_classes
                    )))
                }
                Some(k) => vec![k],
                None => (0..spec.num_classes).collect(),
            };
            for k in labels {
                let g = style_sweep_grid(&ckpt.model, k, grid, range).map_err(Failure::dimension)?;
                write_into(&out, &format!("sweep_{k}.pgm"), &g)?;
                let c = sweep_consistency(&ckpt.model, &g, k).map_err(Failure::other)?;
                println!("sweep_consistency_{k}={c}");
            }
            Ok(())
        }
        Command::Gradcheck { seed, inject_fault } => gradcheck(seed, inject_fault.as_deref()),
    }
}

fn write_into(out: &Path, name: &str, grid: &structvae_core::eval::ImageGrid) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::other(format!("{}: {e}", out.display())))?;
    write_pgm(grid, &out.join(name)).map_err(|e| Failure::other(format!("{e:#}")))
}

/// Loads the checkpoint named by `--checkpoint` (or `<out>/checkpoint.bin`)
/// and resolves the configuration on top of the one it was trained with.
fn open_checkpoint(args: &ConfigArgs, explicit: Option<&Path>) -> Result<(RunConfig, Checkpoint), Failure> {
    let provisional = args.resolve(RunConfig::default())?;
    let path = checkpoint_path(explicit, &provisional)?;
    let ckpt = load_checkpoint(&path).map_err(|e| Failure::checkpoint(format!("{}: {e}", path.display())))?;
    let cfg = args.resolve(ckpt.config()?)?;
    ckpt.ensure_compatible(&cfg)?;
    Ok((cfg, ckpt))
}

pub fn gradcheck(seed: u64, fault: Option<&str>) -> Result<(), Failure> {
    let fault = match fault {
        None => None,
        Some(name) => Some(
            OpKind::DIFFERENTIABLE
                .into_iter()
                .find(|op| op.name() == name)
                .ok_or_else(|| Failure::config(format!("unknown op `{name}`")))?,
        ),
    };
    let mut failed = Vec::new();
    for c in op_suite(seed, fault).map_err(Failure::gradcheck)? {
        let ok = c.worst_rel_err < GRADCHECK_TOLERANCE;
        println!(
            "{:<12} {:.3e} {}",
            c.op.name(),
            c.worst_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(c.op.name().to_owned());
        }
    }
    for mode in [EstimatorMode::Marginalize, EstimatorMode::Plugin] {
        let err = model_check(seed, mode, fault).map_err(Failure::gradcheck)?;
        let ok = err < GRADCHECK_TOLERANCE;
        let name = format!("model/{}", mode.as_str());
        println!("{name:<12} {err:.3e} {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::gradcheck(format!("gradient check failed: {}", failed.join(", "))))
    }
}

