//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Every parameter needs a gradient; pass an explicit zero
    /// tensor for parameters the loss does not reach.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Invalid(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            match g {
                None => return Err(Error::MissingGrad(params.name(id).to_string())),
                Some(g) if g.len() != params.get(id).len() => {
                    return Err(Error::shape("adam", params.get(id).shape(), g.shape()))
                }
                _ => {}
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[k].as_ref().unwrap().data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g[i].f64();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut x = p[i].f64();
                x -= c.lr * c.weight_decay * x;
                x -= c.lr * mhat / (vhat.sqrt() + c.eps);
                p[i] = T::of(x);
            }
        }
        Ok(())
    }
}

/// Fills unreachable parameters with zero gradients.
pub fn densify<T: Scalar>(params: &ParamStore<T>, grads: Vec<Option<Tensor<T>>>) -> Vec<Option<Tensor<T>>> {
    grads
        .into_iter()
        .zip(params.tensors())
        .map(|(g, p)| Some(g.unwrap_or_else(|| Tensor::zeros(p.shape()))))
        .collect()
}
