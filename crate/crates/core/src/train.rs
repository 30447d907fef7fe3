//! Training configuration and the single-step training state machine.
//!
//! IO (metrics, checkpoints, evaluation cadence) is left to the caller; a
//! [`Trainer`] only knows how to advance one optimisation step.

use alloc::format;

use crate::data::{self, purpose, Dataset, MinibatchSampler, SupervisionSchedule};
use crate::error::{Error, Result};
use crate::model::{EstimatorMode, LossBreakdown, ModelSpec, StructuredVAE, StyleNoise, PARAM_NAMES};
use crate::optim::{adam_step, AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: u64,
    pub batch_size: usize,
    pub rate: f64,
    pub labels_per_class: usize,
    /// Classifier weight; `None` resolves to `0.1 · N / labelled`.
    pub alpha: Option<f64>,
    pub estimator: EstimatorMode,
    pub seed: u64,
    pub style_dim: usize,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 50,
            batch_size: 80,
            rate: 0.1,
            labels_per_class: 10,
            alpha: None,
            estimator: EstimatorMode::Plugin,
            seed: 1,
            style_dim: 10,
            hidden_width: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0) || !a.lr.is_finite() {
            return Err(Error::contract(format!("learning rate must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::contract("Adam betas must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::contract("Adam epsilon must be positive"));
        }
        SupervisionSchedule::new(self.rate, self.batch_size)?;
        if let Some(alpha) = self.alpha {
            if !(alpha >= 0.0) || !alpha.is_finite() {
                return Err(Error::contract(format!("alpha must be non-negative, got {alpha}")));
            }
        }
        if self.style_dim == 0 || self.hidden_width == 0 {
            return Err(Error::contract("style_dim and hidden_width must be at least 1"));
        }
        if self.rate > 0.0 && self.labels_per_class == 0 {
            return Err(Error::contract(
                "a positive supervision rate needs labels_per_class >= 1",
            ));
        }
        Ok(())
    }

    /// `α`, defaulting to `0.1 · total / labelled` (zero with no labels).
    pub fn resolved_alpha(&self, total: usize, labeled: usize) -> f64 {
        self.alpha.unwrap_or(if labeled == 0 {
            0.0
        } else {
            0.1 * total as f64 / labeled as f64
        })
    }

    pub fn model_spec(&self, data: &Dataset) -> ModelSpec {
        let labeled = self.labels_per_class * data.num_classes;
        ModelSpec {
            input_dim: data.input_dim(),
            num_classes: data.num_classes,
            style_dim: self.style_dim,
            hidden_width: self.hidden_width,
            estimator: self.estimator,
            classifier_weight: self.resolved_alpha(data.len(), labeled),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: StructuredVAE,
    adam: AdamState,
    step: u64,
    sampler: MinibatchSampler,
}

impl Trainer {
    /// Fresh run: labelled split and initial weights both derive from the
    /// seed.
    pub fn new(config: TrainConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        let spec = config.model_spec(train);
        let model = StructuredVAE::new(spec, &mut data::stream(config.seed, purpose::INIT, 0))?;
        let adam = AdamState::new(model.params());
        Self::assemble(config, train, model, adam, 0)
    }

    /// Continues a run from saved state. The split is recomputed from the
    /// seed, so it matches the original run.
    pub fn resume(
        config: TrainConfig,
        train: &Dataset,
        model: StructuredVAE,
        adam: AdamState,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        if *model.spec() != config.model_spec(train) {
            return Err(Error::contract("checkpoint model does not match the configuration"));
        }
        if adam.t != step {
            return Err(Error::contract(format!(
                "optimizer has taken {} steps but the checkpoint is at step {step}",
                adam.t
            )));
        }
        Self::assemble(config, train, model, adam, step)
    }

    fn assemble(
        config: TrainConfig,
        train: &Dataset,
        model: StructuredVAE,
        adam: AdamState,
        step: u64,
    ) -> Result<Self> {
        let split = data::select_labeled_subset(train, config.labels_per_class, config.seed)?;
        let schedule = SupervisionSchedule::new(config.rate, config.batch_size)?;
        let sampler = MinibatchSampler::new(split, schedule, train.len(), config.seed)?;
        Ok(Trainer {
            config,
            model,
            adam,
            step,
            sampler,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &StructuredVAE {
        &self.model
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.sampler.steps_per_epoch()
    }

    pub fn total_steps(&self) -> u64 {
        self.config.epochs * self.steps_per_epoch()
    }

    pub fn sampler(&self) -> &MinibatchSampler {
        &self.sampler
    }

    /// One objective evaluation and Adam update. On a non-finite loss or
    /// gradient the model and optimizer are left as they were.
    pub fn train_step(&mut self, train: &Dataset) -> Result<LossBreakdown> {
        let batch = self.sampler.batch(train, self.step)?;
        let mut rng = data::stream(self.config.seed, purpose::NOISE, self.step);
        let noise = StyleNoise::draw(&mut rng, batch.x.rows(), self.model.spec());
        let (breakdown, grads) = self.model.objective_with_grads(&batch, &noise)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                value: breakdown.total,
            });
        }
        adam_step(
            self.model.params_mut(),
            &grads,
            &mut self.adam,
            &self.config.adam,
            &PARAM_NAMES,
        )?;
        self.step += 1;
        Ok(breakdown)
    }
}
