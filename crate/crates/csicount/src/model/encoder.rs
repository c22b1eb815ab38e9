//! The CSI-ResNet-A encoder, task heads, and parameter freezing.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::blocks::ResidualBlock;
use crate::model::layers::{BatchNorm1d, Conv1d, Linear, Mode, TensorKind, TensorVisitor};
use crate::ndtensor::{ops, Graph, Tensor};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub window_len: usize,
    pub layer_channels: Vec<usize>,
    pub blocks_per_layer: usize,
    pub se_reduction: usize,
    pub adapter_bottleneck: usize,
    pub embedding_dim: usize,
    pub se_enabled: bool,
    pub adapters_enabled: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 52,
            window_len: 100,
            layer_channels: vec![64, 128, 256],
            blocks_per_layer: 2,
            se_reduction: 16,
            adapter_bottleneck: 16,
            embedding_dim: 128,
            se_enabled: true,
            adapters_enabled: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_channels.is_empty() || self.blocks_per_layer == 0 {
            return Err(Error::Config("encoder needs at least one layer and block".into()));
        }
        if self.se_enabled {
            if let Some(c) = self
                .layer_channels
                .iter()
                .find(|&&c| self.se_reduction == 0 || c % self.se_reduction != 0)
            {
                return Err(Error::Config(format!(
                    "se_reduction {} does not divide layer width {c}",
                    self.se_reduction
                )));
            }
        }
        if self.adapters_enabled && self.adapter_bottleneck == 0 {
            return Err(Error::Config("adapter_bottleneck must be >= 1".into()));
        }
        if self.in_channels == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("channel and embedding dims must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CsiEncoder<T: Scalar> {
    pub config: EncoderConfig,
    pub conv1: Conv1d<T>,
    pub bn1: BatchNorm1d<T>,
    pub layers: Vec<Vec<ResidualBlock<T>>>,
    pub fc: Linear<T>,
}

impl<T: Scalar> CsiEncoder<T> {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = config.layer_channels[0];
        let conv1 = Conv1d::new(config.in_channels, first, 7, 2, 3, true, &mut rng);
        let bn1 = BatchNorm1d::new(first);
        let mut layers = Vec::new();
        let mut in_ch = first;
        for (li, &out_ch) in config.layer_channels.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..config.blocks_per_layer {
                let stride = if li > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(
                    in_ch,
                    out_ch,
                    stride,
                    config.se_reduction,
                    config.adapter_bottleneck,
                    config.se_enabled,
                    config.adapters_enabled,
                    &mut rng,
                ));
                in_ch = out_ch;
            }
            layers.push(blocks);
        }
        let fc = Linear::new(in_ch, config.embedding_dim, true, &mut rng);
        Ok(CsiEncoder {
            config: config.clone(),
            conv1,
            bn1,
            layers,
            fc,
        })
    }

    /// B x C x L in, B x embedding_dim out.
    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let xs = x.shape();
        if xs.len() != 3 || xs[1] != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects B x {} x L input, got {xs:?}",
                self.config.in_channels
            )));
        }
        let h = self.conv1.forward(g, x)?;
        let h = self.bn1.forward(g, &h, mode)?;
        let h = ops::relu(g, &h);
        let mut h = ops::maxpool1d(g, &h, 3, 2, 1)?;
        for blocks in &self.layers {
            for block in blocks {
                h = block.forward(g, &h, mode)?;
            }
        }
        let h = ops::global_avg_pool1d(g, &h)?;
        self.fc.forward(g, &h)
    }

    pub fn visit(&self, f: &mut TensorVisitor<'_, T>) {
        self.conv1.visit("conv1", f);
        self.bn1.visit("bn1", f);
        for (li, blocks) in self.layers.iter().enumerate() {
            for (bi, block) in blocks.iter().enumerate() {
                block.visit(&format!("layer{}.block{}", li + 1, bi + 1), f);
            }
        }
        self.fc.visit("fc", f);
    }

    /// Learned parameters as (path, tensor), in declaration order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |path, t, kind| {
            if kind == TensorKind::Param {
                out.push((path.to_string(), t.clone()));
            }
        });
        out
    }

    /// Non-learned state (batch-norm running statistics) as (path, tensor).
    pub fn named_buffers(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |path, t, kind| {
            if kind == TensorKind::Buffer {
                out.push((path.to_string(), t.clone()));
            }
        });
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Linear map from the embedding to per-class logits.
#[derive(Debug, Clone)]
pub struct ClassificationHead<T: Scalar> {
    pub fc: Linear<T>,
    pub num_classes: usize,
}

impl<T: Scalar> ClassificationHead<T> {
    pub fn new(embedding_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClassificationHead {
            fc: Linear::new(embedding_dim, num_classes, true, &mut rng),
            num_classes,
        }
    }

    pub fn forward(&self, g: &Graph<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc.forward(g, e)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.fc.visit("head.fc", &mut |path, t, _| {
            out.push((path.to_string(), t.clone()));
        });
        out
    }

    pub fn param_count(&self) -> usize {
        self.fc.param_count()
    }
}

/// Two affine maps with a relu between; used only during contrastive
/// pre-training and discarded afterwards.
#[derive(Debug, Clone)]
pub struct ProjectionHead<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> ProjectionHead<T> {
    pub fn new(embedding_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProjectionHead {
            fc1: Linear::new(embedding_dim, embedding_dim, true, &mut rng),
            fc2: Linear::new(embedding_dim, out_dim, true, &mut rng),
        }
    }

    pub fn forward(&self, g: &Graph<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
        let h = ops::relu(g, &self.fc1.forward(g, e)?);
        self.fc2.forward(g, &h)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        let mut push = |path: &str, t: &Tensor<T>, _: TensorKind| {
            out.push((path.to_string(), t.clone()));
        };
        self.fc1.visit("proj.fc1", &mut push);
        self.fc2.visit("proj.fc2", &mut push);
        out
    }
}

/// Maps an embedding to a single domain logit (source vs target).
#[derive(Debug, Clone)]
pub struct DomainDiscriminator<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> DomainDiscriminator<T> {
    pub fn new(embedding_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DomainDiscriminator {
            fc1: Linear::new(embedding_dim, hidden, true, &mut rng),
            fc2: Linear::new(hidden, 1, true, &mut rng),
        }
    }

    /// B x embedding_dim in, B x 1 raw logits out.
    pub fn forward(&self, g: &Graph<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
        let h = ops::relu(g, &self.fc1.forward(g, e)?);
        self.fc2.forward(g, &h)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        let mut push = |path: &str, t: &Tensor<T>, _: TensorKind| {
            out.push((path.to_string(), t.clone()));
        };
        self.fc1.visit("disc.fc1", &mut push);
        self.fc2.visit("disc.fc2", &mut push);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Full,
    AdaptersAndHead,
    HeadOnly,
    FinalBlockAndHead,
}

impl MaskMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MaskMode::Full),
            "adapters_and_head" => Ok(MaskMode::AdaptersAndHead),
            "head_only" => Ok(MaskMode::HeadOnly),
            "final_block_and_head" => Ok(MaskMode::FinalBlockAndHead),
            other => Err(Error::InvalidArg(format!("unknown trainable mode '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Full => "full",
            MaskMode::AdaptersAndHead => "adapters_and_head",
            MaskMode::HeadOnly => "head_only",
            MaskMode::FinalBlockAndHead => "final_block_and_head",
        }
    }
}

/// Which named parameters the optimizer may update.
#[derive(Debug, Clone)]
pub struct TrainableMask {
    pub mode: MaskMode,
    trainable: BTreeSet<String>,
}

impl TrainableMask {
    pub fn is_trainable(&self, path: &str) -> bool {
        self.trainable.contains(path)
    }

    pub fn trainable_paths(&self) -> impl Iterator<Item = &String> {
        self.trainable.iter()
    }

    /// Total element count across trainable parameters.
    pub fn trainable_count<T: Scalar>(
        &self,
        encoder: &CsiEncoder<T>,
        head: Option<&ClassificationHead<T>>,
    ) -> usize {
        let mut all = encoder.named_params();
        if let Some(h) = head {
            all.extend(h.named_params());
        }
        all.iter()
            .filter(|(p, _)| self.is_trainable(p))
            .map(|(_, t)| t.numel())
            .sum()
    }
}

/// Build the mask for an encoder + optional head under the given mode. The
/// final block of the last layer is what `FinalBlockAndHead` unfreezes.
pub fn set_trainable<T: Scalar>(
    encoder: &CsiEncoder<T>,
    head: Option<&ClassificationHead<T>>,
    mode: MaskMode,
) -> TrainableMask {
    let final_block = format!(
        "layer{}.block{}.",
        encoder.config.layer_channels.len(),
        encoder.config.blocks_per_layer
    );
    let mut trainable = BTreeSet::new();
    for (path, _) in encoder.named_params() {
        let keep = match mode {
            MaskMode::Full => true,
            MaskMode::AdaptersAndHead => path.contains(".adapter."),
            MaskMode::HeadOnly => false,
            MaskMode::FinalBlockAndHead => path.starts_with(&final_block),
        };
        if keep {
            trainable.insert(path);
        }
    }
    if let Some(h) = head {
        for (path, _) in h.named_params() {
            trainable.insert(path);
        }
    }
    TrainableMask { mode, trainable }
}
