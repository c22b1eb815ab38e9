//! Parameter-holding layers: convolution, batch normalization, affine.

use rand::Rng;

use crate::ndtensor::{ops, Graph, Tensor};
use crate::scalar::Scalar;
use crate::Result;

/// Forward-pass mode. Eval uses running batch-norm statistics and never
/// mutates them, so it is fully deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Whether a named tensor is learned or carried state (running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    Buffer,
}

/// Visitor collecting (path, tensor, kind) triples in declaration order.
pub type TensorVisitor<'a, T> = dyn FnMut(&str, &Tensor<T>, TensorKind) + 'a;

fn uniform_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(shape, data).expect("init shape")
}

#[derive(Debug, Clone)]
pub struct Conv1d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel;
        let weight = uniform_init(&[out_channels, in_channels, kernel], fan_in, rng);
        let bias = bias.then(|| uniform_init(&[out_channels], fan_in, rng));
        Conv1d {
            weight,
            bias,
            stride,
            padding,
            kernel,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv1d(g, x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    pub fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        f(&format!("{prefix}.weight"), &self.weight, TensorKind::Param);
        if let Some(b) = &self.bias {
            f(&format!("{prefix}.bias"), b, TensorKind::Param);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub momentum: f64,
    pub channels: usize,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        let gamma = Tensor::param(&[channels], vec![T::one(); channels]).unwrap();
        let beta = Tensor::param(&[channels], vec![T::zero(); channels]).unwrap();
        BatchNorm1d {
            gamma,
            beta,
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::from_vec(&[channels], vec![T::one(); channels]).unwrap(),
            eps: T::from_f64(1e-5),
            momentum: 0.1,
            channels,
        }
    }

    /// In train mode normalizes with batch statistics (biased variance) and
    /// updates running statistics with the unbiased batch variance; in eval
    /// mode uses the stored running statistics unchanged.
    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => {
                let (y, mean, var) = ops::batchnorm1d_train(g, x, &self.gamma, &self.beta, self.eps)?;
                let xs = x.shape();
                let n = (xs[0] * xs[2]) as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = T::from_f64(self.momentum);
                let keep = T::from_f64(1.0 - self.momentum);
                let mut rm = self.running_mean.data_clone();
                let mut rv = self.running_var.data_clone();
                for c in 0..self.channels {
                    rm[c] = keep * rm[c] + m * mean[c];
                    rv[c] = keep * rv[c] + m * var[c] * T::from_f64(unbias);
                }
                self.running_mean.set_data(rm)?;
                self.running_var.set_data(rv)?;
                Ok(y)
            }
            Mode::Eval => ops::batchnorm1d_eval(
                g,
                x,
                &self.gamma,
                &self.beta,
                &self.running_mean.data(),
                &self.running_var.data(),
                self.eps,
            ),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }

    pub fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        f(&format!("{prefix}.gamma"), &self.gamma, TensorKind::Param);
        f(&format!("{prefix}.beta"), &self.beta, TensorKind::Param);
        f(
            &format!("{prefix}.running_mean"),
            &self.running_mean,
            TensorKind::Buffer,
        );
        f(
            &format!("{prefix}.running_var"),
            &self.running_var,
            TensorKind::Buffer,
        );
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let weight = uniform_init(&[out_dim, in_dim], in_dim, rng);
        let bias = bias.then(|| uniform_init(&[out_dim], in_dim, rng));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(g, x, &self.weight, self.bias.as_ref())
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    pub fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        f(&format!("{prefix}.weight"), &self.weight, TensorKind::Param);
        if let Some(b) = &self.bias {
            f(&format!("{prefix}.bias"), b, TensorKind::Param);
        }
    }
}
