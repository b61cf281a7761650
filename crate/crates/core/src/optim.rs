//! Adam with moments held per named parameter so they can be checkpointed.

use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, var) in params.iter() {
            m.insert(name.clone(), var.zeros_like()?);
            v.insert(name.clone(), var.zeros_like()?);
        }
        Ok(Self {
            beta1,
            beta2,
            eps,
            steps: 0,
            m,
            v,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update of every parameter in `params` that has a
    /// gradient in `grads`.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // detached so the moments never hold on to a gradient graph
            let g = g.detach();
            let m = self.m.get_mut(name).expect("moment per parameter");
            let v = self.v.get_mut(name).expect("moment per parameter");
            *m = ((&*m * self.beta1)? + (&g * (1.0 - self.beta1))?)?.detach();
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let m_hat = (&*m / c1)?;
            let v_hat = (&*v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
        }
        Ok(())
    }

    /// Moments as `{prefix}m.{name}` and `{prefix}v.{name}`.
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let m = self.m.iter().map(|(k, t)| (format!("{prefix}m.{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("{prefix}v.{k}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn load_state(&mut self, tensors: &HashMap<String, Tensor>, prefix: &str, steps: u64) -> Result<()> {
        for (kind, map) in [("m", &mut self.m), ("v", &mut self.v)] {
            for (name, slot) in map.iter_mut() {
                let key = format!("{prefix}{kind}.{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor `{key}`")))?;
                if t.dims() != slot.dims() {
                    return Err(Error::Checkpoint(format!("optimizer tensor `{key}` has the wrong shape")));
                }
                *slot = t.to_dtype(slot.dtype())?;
            }
        }
        self.steps = steps;
        Ok(())
    }
}
