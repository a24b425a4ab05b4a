//! Optimization: AdamW, mixup, epoch loop, cross-validation and ablations.

mod ablation;
mod cv;
mod gradcheck;
mod mixup;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ablation::{ablation_variants, run_ablation, AblationOutcome, AblationRow, ConfigDelta, Variant, ABLATION_HEADER};
pub use cv::{evaluate, run_cv, CvOutcome, FoldOutcome};
pub use gradcheck::{gradcheck_model, BlockCheck};
pub use mixup::{mix_with, mixup_batch, MixedBatch};
pub use optim::{adamw_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trainer::{balanced_batches, BatchStats, EpochStats, Trainer};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Beta shape parameter for mixup; 0 disables mixing.
    pub mixup_alpha: f64,
    /// Weight of the intra-class graph penalty.
    pub alpha: f64,
    pub seed: u64,
    pub folds: usize,
    /// Concurrent folds; 0 lets the thread pool decide.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 0.001,
            epochs: 300,
            batch_size: 16,
            mixup_alpha: 0.2,
            alpha: 1.0,
            seed: 0,
            folds: 5,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.mixup_alpha >= 0.0) {
            return fail(format!("mixup_alpha must be nonnegative, got {}", self.mixup_alpha));
        }
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        Ok(())
    }
}
