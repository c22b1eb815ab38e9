//! Flat, versioned run configuration.
//!
//! One TOML document drives every pipeline stage. All keys live at the top
//! level so a config diff reads like a list of changed knobs; unknown keys
//! are an error so a typo cannot silently fall back to a default.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::augment::AugmentPolicy;
use crate::counter::CounterConfig;
use crate::model::{EncoderConfig, MaskMode};
use crate::synth::PreprocessParams;
use crate::train::{LossKind, TrainConfig};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,

    // preprocessing
    pub sample_rate_hz: f64,
    pub filter_order: usize,
    pub filter_cutoff_hz: f64,
    pub window_len: usize,
    pub window_step: usize,
    pub event_span_s: f64,

    // augmentation
    pub jitter_sigma: f64,
    pub scale_sigma: f64,
    pub max_segments: usize,

    // encoder
    pub in_channels: usize,
    pub layer_channels: Vec<usize>,
    pub blocks_per_layer: usize,
    pub se_reduction: usize,
    pub adapter_bottleneck: usize,
    pub embedding_dim: usize,
    pub se_enabled: bool,
    pub adapters_enabled: bool,

    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    /// "cross_entropy" or "focal"
    pub loss: String,
    pub focal_gamma: f64,
    pub temperature: f64,
    pub projection_dim: usize,
    /// "full", "adapters_and_head", "head_only", or "final_block_and_head"
    pub mask_mode: String,
    pub num_classes: usize,
    pub k_shot: usize,
    pub repeats: usize,

    // counter
    pub event_threshold: u32,
    pub cooldown_period: u32,
    pub clamp_at_zero: bool,

    // synthetic data
    pub n_scripts: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            sample_rate_hz: 100.0,
            filter_order: 4,
            filter_cutoff_hz: 8.0,
            window_len: enc.window_len,
            window_step: 50,
            event_span_s: 2.0,
            jitter_sigma: 0.05,
            scale_sigma: 0.1,
            max_segments: 5,
            in_channels: enc.in_channels,
            layer_channels: enc.layer_channels,
            blocks_per_layer: enc.blocks_per_layer,
            se_reduction: enc.se_reduction,
            adapter_bottleneck: enc.adapter_bottleneck,
            embedding_dim: enc.embedding_dim,
            se_enabled: enc.se_enabled,
            adapters_enabled: enc.adapters_enabled,
            epochs: train.epochs,
            batch_size: train.batch_size,
            encoder_lr: train.encoder_lr,
            head_lr: train.head_lr,
            loss: "cross_entropy".into(),
            focal_gamma: 2.0,
            temperature: train.temperature,
            projection_dim: train.projection_dim,
            mask_mode: "adapters_and_head".into(),
            num_classes: 3,
            k_shot: 10,
            repeats: train.repeats,
            event_threshold: 5,
            cooldown_period: 10,
            clamp_at_zero: true,
            n_scripts: 40,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, self.to_toml()?.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        self.encoder_config().validate()?;
        self.train_config()?.validate(false)?;
        self.augment_policy().validate(self.window_len)?;
        self.counter_config().validate()?;
        self.mask()?;
        crate::dsp::FilterSpec::new(self.filter_order, self.filter_cutoff_hz, self.sample_rate_hz)?;
        if self.window_step == 0 || self.window_step > self.window_len {
            return Err(Error::Config(format!(
                "window_step {} must be in 1..={}",
                self.window_step, self.window_len
            )));
        }
        if self.event_span_s <= 0.0 {
            return Err(Error::Config("event_span_s must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        let sum = self.split_train + self.split_val + self.split_test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            in_channels: self.in_channels,
            window_len: self.window_len,
            layer_channels: self.layer_channels.clone(),
            blocks_per_layer: self.blocks_per_layer,
            se_reduction: self.se_reduction,
            adapter_bottleneck: self.adapter_bottleneck,
            embedding_dim: self.embedding_dim,
            se_enabled: self.se_enabled,
            adapters_enabled: self.adapters_enabled,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let loss = match self.loss.as_str() {
            "cross_entropy" => LossKind::CrossEntropy,
            "focal" => LossKind::Focal {
                gamma: self.focal_gamma,
            },
            other => return Err(Error::Config(format!("unknown loss '{other}'"))),
        };
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            encoder_lr: self.encoder_lr,
            head_lr: self.head_lr,
            loss,
            temperature: self.temperature,
            projection_dim: self.projection_dim,
            seed: self.seed,
            k_shot: Some(self.k_shot),
            repeats: self.repeats,
        })
    }

    pub fn augment_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            jitter_sigma: self.jitter_sigma,
            scale_sigma: self.scale_sigma,
            max_segments: self.max_segments,
            seed: self.seed,
        }
    }

    pub fn counter_config(&self) -> CounterConfig {
        CounterConfig {
            event_threshold: self.event_threshold,
            cooldown_period: self.cooldown_period,
            clamp_at_zero: self.clamp_at_zero,
        }
    }

    pub fn preprocess_params(&self) -> PreprocessParams {
        PreprocessParams {
            filter_order: self.filter_order,
            cutoff_hz: self.filter_cutoff_hz,
            window_len: self.window_len,
            window_step: self.window_step,
            event_span_s: self.event_span_s,
        }
    }

    pub fn mask(&self) -> Result<MaskMode> {
        MaskMode::parse(&self.mask_mode)
    }
}
