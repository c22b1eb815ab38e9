//! Residual blocks with squeeze-excitation gating and bottleneck adapters.

use rand::Rng;

use crate::model::layers::{BatchNorm1d, Conv1d, Linear, Mode, TensorVisitor};
use crate::ndtensor::{ops, Graph, Tensor};
use crate::scalar::Scalar;
use crate::Result;

/// Channel attention: gate each channel by a sigmoid of a bottleneck MLP
/// applied to the channel's temporal mean. No bias terms.
#[derive(Debug, Clone)]
pub struct SeBlock<T: Scalar> {
    pub w1: Linear<T>,
    pub w2: Linear<T>,
    pub channels: usize,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let hidden = channels / reduction;
        SeBlock {
            w1: Linear::new(channels, hidden, false, rng),
            w2: Linear::new(hidden, channels, false, rng),
            channels,
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let z = ops::global_avg_pool1d(g, x)?;
        let h = ops::relu(g, &self.w1.forward(g, &z)?);
        let s = ops::sigmoid(g, &self.w2.forward(g, &h)?);
        ops::scale_channels(g, x, &s)
    }

    pub fn param_count(&self) -> usize {
        self.w1.param_count() + self.w2.param_count()
    }

    pub fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        self.w1.visit(&format!("{prefix}.w1"), f);
        self.w2.visit(&format!("{prefix}.w2"), f);
    }
}

/// Residual bottleneck of two 1x1 convolutions. The up-path kernel and bias
/// start at zero, so a fresh adapter is an exact identity.
#[derive(Debug, Clone)]
pub struct Adapter<T: Scalar> {
    pub down: Conv1d<T>,
    pub up: Conv1d<T>,
}

impl<T: Scalar> Adapter<T> {
    pub fn new(channels: usize, bottleneck: usize, rng: &mut impl Rng) -> Self {
        let down = Conv1d::new(channels, bottleneck, 1, 1, 0, true, rng);
        let up = Conv1d::new(bottleneck, channels, 1, 1, 0, true, rng);
        up.weight.set_data(vec![T::zero(); up.weight.numel()]).unwrap();
        if let Some(b) = &up.bias {
            b.set_data(vec![T::zero(); channels]).unwrap();
        }
        Adapter { down, up }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = ops::relu(g, &self.down.forward(g, x)?);
        let h = self.up.forward(g, &h)?;
        ops::add(g, x, &h)
    }

    pub fn param_count(&self) -> usize {
        self.down.param_count() + self.up.param_count()
    }

    pub fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        self.down.visit(&format!("{prefix}.down"), f);
        self.up.visit(&format!("{prefix}.up"), f);
    }
}

/// Two convolutional sub-blocks with optional SE gating and adapter, added
/// to a shortcut that projects with a strided 1x1 conv + BN whenever the
/// input and output shapes differ.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Scalar> {
    pub conv1: Conv1d<T>,
    pub bn1: BatchNorm1d<T>,
    pub conv2: Conv1d<T>,
    pub bn2: BatchNorm1d<T>,
    pub se: Option<SeBlock<T>>,
    pub adapter: Option<Adapter<T>>,
    pub shortcut: Option<(Conv1d<T>, BatchNorm1d<T>)>,
}

impl<T: Scalar> ResidualBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        se_reduction: usize,
        adapter_bottleneck: usize,
        se_enabled: bool,
        adapters_enabled: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = Conv1d::new(in_channels, out_channels, 3, stride, 1, true, rng);
        let bn1 = BatchNorm1d::new(out_channels);
        let conv2 = Conv1d::new(out_channels, out_channels, 3, 1, 1, true, rng);
        let bn2 = BatchNorm1d::new(out_channels);
        let se = se_enabled.then(|| SeBlock::new(out_channels, se_reduction, rng));
        let adapter = adapters_enabled.then(|| Adapter::new(out_channels, adapter_bottleneck, rng));
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv1d::new(in_channels, out_channels, 1, stride, 0, true, rng),
                BatchNorm1d::new(out_channels),
            )
        });
        ResidualBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            se,
            adapter,
            shortcut,
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.conv1.forward(g, x)?;
        let h = self.bn1.forward(g, &h, mode)?;
        let h = ops::relu(g, &h);
        let h = self.conv2.forward(g, &h)?;
        let mut h = self.bn2.forward(g, &h, mode)?;
        if let Some(se) = &self.se {
            h = se.forward(g, &h)?;
        }
        if let Some(a) = &self.adapter {
            h = a.forward(g, &h)?;
        }
        let sc = match &self.shortcut {
            Some((conv, bn)) => bn.forward(g, &conv.forward(g, x)?, mode)?,
            None => x.clone(),
        };
        Ok(ops::relu(g, &ops::add(g, &h, &sc)?))
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count()
            + self.se.as_ref().map_or(0, SeBlock::param_count)
            + self.adapter.as_ref().map_or(0, Adapter::param_count)
            + self
                .shortcut
                .as_ref()
                .map_or(0, |(c, b)| c.param_count() + b.param_count())
    }

    pub fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        self.bn2.visit(&format!("{prefix}.bn2"), f);
        if let Some(se) = &self.se {
            se.visit(&format!("{prefix}.se"), f);
        }
        if let Some(a) = &self.adapter {
            a.visit(&format!("{prefix}.adapter"), f);
        }
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(&format!("{prefix}.shortcut.conv"), f);
            bn.visit(&format!("{prefix}.shortcut.bn"), f);
        }
    }
}
