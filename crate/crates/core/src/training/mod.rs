//! Losses, optimizer, training loop and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod loss;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use data::{FeatureNormalizer, PreparedSample, TrainingSet};
pub use loss::{contact_mask, loss_foot, loss_foot_value, loss_simple, loss_simple_value, loss_x0};
pub use trainer::{StepStats, Trainer};

/// Space in which the denoising error is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSpace {
    /// ‖ε − ε̂‖² with ε̂ implied by x̂₀; weights x̂₀ errors by ᾱ/(1−ᾱ).
    #[default]
    Epsilon,
    /// ‖x₀ − x̂₀‖², equal weight at every timestep.
    X0,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Kept for configuration compatibility; no discriminator is trained.
    pub discriminator_lr: f64,
    /// Weight α of the foot-contact loss.
    pub alpha_foot: f64,
    /// When false the foot-contact term is not built at all.
    pub foot_loss: bool,
    pub loss_space: LossSpace,
    /// Probability of replacing a sample's condition with the null condition.
    pub cond_dropout: f64,
    pub steps: u64,
    pub seed: u64,
    /// Steps between checkpoints written by the command-line trainer.
    pub checkpoint_every: u64,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 96,
            lr: 2e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-5,
            discriminator_lr: 1e-4,
            alpha_foot: 0.1,
            foot_loss: true,
            loss_space: LossSpace::Epsilon,
            cond_dropout: 0.1,
            steps: 2000,
            seed: 0,
            checkpoint_every: 500,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| {
            Err(Error::invalid(format!("train.{field} {why}")))
        };
        if self.batch_size == 0 {
            return fail("batch_size", "must be ≥ 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return fail("adam_beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam_beta2", "must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay", "must be ≥ 0");
        }
        if !(self.alpha_foot >= 0.0 && self.alpha_foot.is_finite()) {
            return fail("alpha_foot", "must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return fail("cond_dropout", "must lie in [0, 1]");
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return fail("beta_start", "and train.beta_end must satisfy 0 < start ≤ end < 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self, timesteps: usize) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(timesteps, self.beta_start, self.beta_end)
    }
}
