//! Bias-corrected Adam over named parameter groups.

use crate::ndtensor::Tensor;
use crate::scalar::Scalar;
use crate::{Error, Result};

struct Slot<T: Scalar> {
    name: String,
    param: Tensor<T>,
    lr: T,
    m: Vec<T>,
    v: Vec<T>,
}

pub struct Adam<T: Scalar> {
    slots: Vec<Slot<T>>,
    step_count: u64,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Adam {
            slots: Vec::new(),
            step_count: 0,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
        }
    }

    pub fn add_param(&mut self, name: &str, param: &Tensor<T>, lr: f64) {
        let n = param.numel();
        self.slots.push(Slot {
            name: name.to_string(),
            param: param.clone(),
            lr: T::from_f64(lr),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
    }

    pub fn add_params<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a (String, Tensor<T>)>,
        lr: f64,
    ) {
        for (name, t) in params {
            self.add_param(name, t, lr);
        }
    }

    pub fn num_params(&self) -> usize {
        self.slots.iter().map(|s| s.param.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every managed parameter. Each must carry a gradient.
    pub fn step(&mut self) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for slot in &mut self.slots {
            let grad = slot.param.grad().ok_or_else(|| {
                Error::InvalidArg(format!("adam: parameter '{}' has no gradient", slot.name))
            })?;
            let mut data = slot.param.data_clone();
            for i in 0..data.len() {
                let g = grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (T::one() - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (T::one() - self.beta2) * g * g;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                data[i] = data[i] - slot.lr * mhat / (vhat.sqrt() + self.eps);
            }
            slot.param.set_data(data)?;
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for slot in &self.slots {
            slot.param.zero_grad();
        }
    }
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}
