//! Bias-corrected Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


#[cfg(not(feature = "std"))]
use num_traits::Float;
use crate::error::{bail, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|e| vec![T::zero(); e.value.numel()]).collect::<Vec<_>>();
        AdamState { config, m: zeros(), v: zeros(), t: 0 }
    }

    /// One update of every parameter. Gradients are validated first, so a
    /// rejected step leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            bail!(
                Contract,
                "adam: {} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            );
        }
        for (e, g) in params.iter().zip(grads) {
            if g.shape() != e.value.shape() {
                bail!(Dimension, "adam: gradient of {} is {}, parameter is {}", e.name, g.shape(), e.value.shape());
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                bail!(NonFinite, "{}", format!("gradient of {} has {} at element {i}", e.name, g.data()[i]));
            }
        }
        self.t += 1;
        let c = self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.t.min(i32::MAX as u64) as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.t.min(i32::MAX as u64) as i32));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        for (((e, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in e.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
