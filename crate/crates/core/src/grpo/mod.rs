//! Group-relative policy optimization: group-normalized advantages, the
//! clipped and KL-regularized token objective, and the training loop.

mod objective;
mod optim;
mod train;

pub use objective::{
    grpo_objective, kl_penalty, normalize_advantages, token_surrogate, GroupBatch, Objective,
};
pub use optim::{OptimizerConfig, OptimizerState};
pub use train::{
    decode_train_state, encode_train_state, train, StepMetrics, TrainOutcome, TrainState, Trainer,
};

use serde::{Deserialize, Serialize};

use crate::judge::JudgeError;
use crate::policy::{CheckpointError, FeatureError, PolicyError};

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 members, got {0}")]
    GroupTooSmall(usize),
    #[error("sequence {0} in the batch is empty")]
    EmptySequence(usize),
    #[error("batch is inconsistent: {0}")]
    Misaligned(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no training instances")]
    NoInstances,
    #[error("non-finite gradient at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    State(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Responses sampled per context (`G`).
    pub group_size: usize,
    /// Ratio clipping half-width `ε`.
    pub eps_clip: f64,
    /// KL weight `β`.
    pub beta: f64,
    /// Added to the group variance before the square root.
    pub eps_std: f64,
    pub learning_rate: f64,
    /// Steps between reference refreshes; 0 refreshes at each epoch start.
    pub steps_per_ref_update: usize,
    /// Passes over the training instances.
    pub rl_epochs: usize,
    /// Overrides the epoch count with an exact number of steps.
    pub max_steps: Option<usize>,
    /// Contexts per step.
    pub batch_size: usize,
    /// Gradient steps per sampled batch.
    pub updates_per_batch: usize,
    pub l_max: usize,
    pub temperature: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 5,
            eps_clip: 0.2,
            beta: 0.001,
            eps_std: 1e-6,
            learning_rate: 0.05,
            steps_per_ref_update: 0,
            rl_epochs: 1,
            max_steps: None,
            batch_size: 4,
            updates_per_batch: 1,
            l_max: 64,
            temperature: 1.0,
            seed: 0,
            optimizer: OptimizerConfig::Sgd,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return bad("eps_clip must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if !(self.eps_std > 0.0) {
            return bad("eps_std must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.l_max == 0 || self.batch_size == 0 || self.updates_per_batch == 0 {
            return bad("l_max, batch_size and updates_per_batch must be positive");
        }
        Ok(())
    }

    /// Steps in one pass over `n` instances.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.max_steps
            .unwrap_or(self.rl_epochs * self.steps_per_epoch(n))
    }
}
