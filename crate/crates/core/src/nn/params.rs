//! Named, seeded parameter storage.
//!
//! Candle's CPU RNG cannot be seeded, so every initial value is drawn here
//! from a ChaCha stream; two models built with the same seed, dtype and
//! construction order are bit-identical.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// `U(-bound, bound)`.
    Uniform(f64),
}

struct BuilderInner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

/// Creates parameters under a dotted name prefix.
#[derive(Clone)]
pub struct ParamBuilder {
    inner: Rc<RefCell<BuilderInner>>,
    prefix: String,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            inner: Rc::new(RefCell::new(BuilderInner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                dtype,
                device: device.clone(),
            })),
            prefix: String::new(),
        }
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            inner: self.inner.clone(),
            prefix,
        }
    }

    pub fn dtype(&self) -> DType {
        self.inner.borrow().dtype
    }

    pub fn device(&self) -> Device {
        self.inner.borrow().device.clone()
    }

    pub fn var(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        let shape: Shape = shape.into();
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let mut inner = self.inner.borrow_mut();
        if inner.vars.contains_key(&full) {
            return Err(Error::Config(format!("parameter `{full}` declared twice")));
        }
        let n = shape.elem_count();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(b) => (0..n).map(|_| inner.rng.random_range(-b..=b)).collect(),
        };
        let t = Tensor::from_vec(data, shape, &inner.device)?.to_dtype(inner.dtype)?;
        let var = Var::from_tensor(&t)?;
        inner.vars.insert(full, var.clone());
        Ok(var)
    }

    /// Snapshot of everything declared so far.
    pub fn store(&self) -> ParamStore {
        ParamStore {
            vars: self.inner.borrow().vars.clone(),
        }
    }
}

/// All trainable variables of a model, keyed by dotted name.
#[derive(Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.vars.len())
            .field("params", &self.num_params())
            .finish()
    }
}

impl ParamStore {
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrites every variable from `source`; names and shapes must match
    /// exactly.
    pub fn load(&self, source: &HashMap<String, Tensor>) -> Result<()> {
        if source.len() != self.vars.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: model has {}, source has {}",
                self.vars.len(),
                source.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = source
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            self.set(name, var, t)?;
        }
        Ok(())
    }

    /// Copies every variable whose name appears in `other`.
    pub fn copy_matching(&self, other: &ParamStore) -> Result<usize> {
        let mut n = 0;
        for (name, var) in &self.vars {
            if let Some(src) = other.get(name) {
                self.set(name, var, src.as_tensor())?;
                n += 1;
            }
        }
        Ok(n)
    }

    fn set(&self, name: &str, var: &Var, t: &Tensor) -> Result<()> {
        if t.dims() != var.dims() {
            return Err(Error::Config(format!(
                "parameter `{name}`: shape {:?} does not match {:?}",
                t.dims(),
                var.dims()
            )));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
        Ok(())
    }
}
