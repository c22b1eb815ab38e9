//! Optimization loops: contrastive pre-training, supervised fine-tuning
//! under parameter masks, linear probing on cached embeddings, adversarial
//! domain adaptation, and seeded k-shot evaluation.

mod adam;
mod loops;

pub use adam::Adam;
pub use loops::{
    adda_adapt, discriminator_accuracy, domain_probe_accuracy, embed_windows, finetune, kshot_eval, linear_probe,
    predict_windows, pretrain_contrastive, windows_to_tensor, AddaOutcome, KshotMethod,
    KshotOutcome, PretrainOutcome, TrainOutcome,
};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    Focal { gamma: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for encoder-group parameters.
    pub encoder_lr: f64,
    /// Learning rate for the classification head.
    pub head_lr: f64,
    pub loss: LossKind,
    /// NT-Xent softmax temperature (pre-training only).
    pub temperature: f64,
    /// Output width of the throwaway projection head (pre-training only).
    pub projection_dim: usize,
    pub seed: u64,
    pub k_shot: Option<usize>,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 16,
            encoder_lr: 1e-4,
            head_lr: 1e-3,
            loss: LossKind::CrossEntropy,
            temperature: 0.1,
            projection_dim: 64,
            seed: 0,
            k_shot: None,
            repeats: 10,
        }
    }
}

impl TrainConfig {
    /// Contrastive pre-training recipe: 50 epochs, batch 128, lr 1e-3,
    /// temperature 0.1.
    pub fn pretrain_preset() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            encoder_lr: 1e-3,
            head_lr: 1e-3,
            ..Default::default()
        }
    }

    /// Occupancy fine-tune recipe: 25 epochs, batch 16, encoder 1e-4,
    /// head 1e-3, cross-entropy.
    pub fn wiflow_preset() -> Self {
        TrainConfig::default()
    }

    /// Activity-recognition fine-tune recipe: 75 epochs, batch 32, focal
    /// loss with gamma 2.
    pub fn wiar_preset() -> Self {
        TrainConfig {
            epochs: 75,
            batch_size: 32,
            loss: LossKind::Focal { gamma: 2.0 },
            ..Default::default()
        }
    }

    pub fn validate(&self, contrastive: bool) -> Result<()> {
        if self.encoder_lr <= 0.0 || self.head_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if contrastive {
            if self.batch_size < 2 {
                return Err(Error::Config(
                    "contrastive training needs batch_size >= 2".into(),
                ));
            }
            if self.temperature <= 0.0 {
                return Err(Error::Config("temperature must be positive".into()));
            }
            if self.projection_dim == 0 {
                return Err(Error::Config("projection_dim must be >= 1".into()));
            }
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        Ok(())
    }
}
