//! Optimization loop: Adam with an inverse-square-root schedule, sentence
//! batching, validation and best-checkpoint selection.

mod batches;
mod optim;
mod train;

pub use batches::{batch_indices, encode_pairs, make_batches, shuffled_batches, Batch, EncodedPair};
pub use optim::{adam_step, clip_gradients, global_norm, lr_at, OptimizerState};
pub use train::{train, train_from, EarlyStopper, EpochRecord, StopReason, TrainOutcome, Verdict};

use serde::{Deserialize, Serialize};

use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_updates: u64,
    pub batch_sentences: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Hard cap on optimizer updates across all epochs.
    pub max_updates: Option<u64>,
    /// Validation pairs decoded for the logged CER; `None` decodes all, `Some(0)` none.
    pub val_cer_pairs: Option<usize>,
    pub val_decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_updates: 4000,
            batch_sentences: 20,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            clip_norm: 1.0,
            max_updates: None,
            val_cer_pairs: None,
            val_decode: DecodeConfig::greedy(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.base_lr > 0.0
            && self.warmup_updates > 0
            && self.batch_sentences > 0
            && self.adam_eps > 0.0
            && self.max_epochs > 0
            && self.patience >= 1
            && self.clip_norm > 0.0
            && self.max_updates != Some(0);
        if !positive {
            return Err(Error::invalid("training settings must be positive and patience at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        self.val_decode.validate()
    }
}
