//! Learned observables: a small ReLU perceptron with hand-written reverse
//! mode gradients, Adam, the per-subspace training loop and the concatenated
//! stable/unstable dictionary.

mod adam;
mod mlp;
mod ssog;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, Moments};
pub use mlp::{Dense, ForwardCache, LayerRecord, Mlp, MlpRecord};
pub use ssog::{build_ssog, NeuralDictionary, SsogDictionary};
pub use train::{loss, train_subspace_model, Checkpoint, KoopmanNet, SubspaceModel, SubspaceTag};

/// Hidden layer widths of every observable network.
pub const DEFAULT_HIDDEN: [usize; 2] = [16, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// One epoch is one sampled batch and one optimizer step.
    pub epochs: usize,
    pub batch_size: usize,
    /// Subsets at most this large are trained full-batch.
    pub full_batch_limit: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 2000,
            batch_size: 1024,
            full_batch_limit: 4096,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam decay rates must lie in [0, 1)".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}
