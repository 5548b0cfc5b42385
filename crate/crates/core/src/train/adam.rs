use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and externally supplied learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, var) in params.iter() {
            m.insert(name.clone(), var.zeros_like()?);
            v.insert(name.clone(), var.zeros_like()?);
        }
        Ok(Self {
            config,
            step: 0,
            m,
            v,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update; parameters without a gradient are left alone.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let m = self.m.get_mut(name).expect("moment for every parameter");
            let v = self.v.get_mut(name).expect("moment for every parameter");
            *m = ((&*m * beta1)? + (&g * (1.0 - beta1))?)?;
            *v = ((&*v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let denom = (&*v * (1.0 / c2))?.sqrt()?.affine(1.0, eps)?;
            let update = ((&*m * (lr / c1))? / denom)?;
            var.set(&(var.as_tensor() - update)?)?;
        }
        Ok(())
    }

    /// First and second moments keyed `m/<param>` and `v/<param>`.
    pub fn state_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (k, t) in &self.m {
            out.insert(format!("m/{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("v/{k}"), t.clone());
        }
        out
    }

    pub fn load_state(&mut self, step: u64, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (prefix, map) in [("m", &mut self.m), ("v", &mut self.v)] {
            for (k, t) in map.iter_mut() {
                let key = format!("{prefix}/{k}");
                let src = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Config(format!("optimizer state lacks `{key}`")))?;
                if src.dims() != t.dims() {
                    return Err(Error::shape("optimizer state", t.dims(), src.dims()));
                }
                *t = src.to_dtype(t.dtype())?;
            }
        }
        self.step = step;
        Ok(())
    }
}
