//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// One update of `params` in place with gradients aligned to its entries.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} parameter arrays",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.tensor(i).len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for `{}` has {} values, expected {}",
                    params.name(i),
                    g.len(),
                    params.tensor(i).len()
                )));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment estimates and the step counter as named arrays (for checkpoints).
    pub fn state(&self, params: &ParamStore) -> ParamStore {
        let mut s = ParamStore::new();
        for i in 0..params.len() {
            s.insert(format!("m.{}", params.name(i)), self.m[i].clone());
            s.insert(format!("v.{}", params.name(i)), self.v[i].clone());
        }
        s.insert("step", Tensor::scalar(self.step as f64));
        s
    }

    pub fn restore(params: &ParamStore, state: &ParamStore, lr: f64) -> Result<Self> {
        let mut adam = Adam::new(params, lr);
        for i in 0..params.len() {
            adam.m[i] = state.require(&format!("m.{}", params.name(i)))?.clone();
            adam.v[i] = state.require(&format!("v.{}", params.name(i)))?.clone();
        }
        adam.step = state.require("step")?.data[0] as u64;
        Ok(adam)
    }
}
