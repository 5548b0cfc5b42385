//! VGG-19 feature taps for the perceptual term.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ParamBuilder, ParamStore};

/// Output widths of the convolutions in the first four VGG-19 groups.
const GROUPS: [&[usize]; 4] = [&[64, 64], &[128, 128], &[256, 256, 256, 256], &[512, 512, 512, 512]];

/// Post-activation taps at the ends of groups two, three and four
/// (`relu2_2`, `relu3_4`, `relu4_4` in `features.*` numbering).
pub const DEFAULT_TAPS: [usize; 3] = [8, 17, 26];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone)]
enum Layer {
    Conv(Conv2d),
    Relu,
    Pool,
}

/// Frozen VGG-19 trunk up to the deepest requested tap.
#[derive(Debug, Clone)]
pub struct Vgg19Features {
    layers: Vec<Layer>,
    taps: Vec<usize>,
    params: ParamStore,
}

impl Vgg19Features {
    /// Random weights; only useful for tests.
    pub fn random(seed: u64, taps: &[usize], dtype: DType, device: &Device) -> Result<Self> {
        Self::build(&ParamBuilder::new(seed, dtype, device), taps)
    }

    /// Weights from a safetensors file with torchvision `features.{i}.weight`
    /// / `features.{i}.bias` names.
    pub fn load(path: &Path, taps: &[usize], dtype: DType, device: &Device) -> Result<Self> {
        let b = ParamBuilder::new(0, dtype, device);
        let net = Self::build(&b, taps)?;
        let raw = candle_core::safetensors::load(path, device).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let wanted: HashMap<String, Tensor> = net
            .params
            .names()
            .map(|n| {
                raw.get(n).cloned().map(|t| (n.clone(), t)).ok_or_else(|| Error::Missing {
                    path: path.to_path_buf(),
                    what: format!("tensor `{n}`"),
                })
            })
            .collect::<Result<_>>()?;
        net.params.load(&wanted)?;
        Ok(net)
    }

    fn build(b: &ParamBuilder, taps: &[usize]) -> Result<Self> {
        let last = *taps
            .iter()
            .max()
            .ok_or_else(|| Error::Config("perceptual loss needs at least one tap".into()))?;
        let mut layers = Vec::new();
        let mut in_ch = 3;
        'outer: for group in GROUPS {
            for &out in group {
                let idx = layers.len();
                let conv = Conv2d::new(&b.pp(format!("features.{idx}")), in_ch, out, 3)?;
                layers.push(Layer::Conv(conv));
                layers.push(Layer::Relu);
                in_ch = out;
                if layers.len() > last {
                    break 'outer;
                }
            }
            layers.push(Layer::Pool);
            if layers.len() > last {
                break;
            }
        }
        if layers.len() <= last {
            return Err(Error::Config(format!("tap {last} is deeper than relu4_4")));
        }
        if let Some(bad) = taps.iter().find(|&&t| !matches!(layers[t], Layer::Relu)) {
            return Err(Error::Config(format!("tap {bad} is not a ReLU output")));
        }
        let mut taps = taps.to_vec();
        taps.sort_unstable();
        taps.dedup();
        Ok(Self {
            layers,
            taps,
            params: b.store(),
        })
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    /// `(B, 3, H, W)` in `[0, 1]` → one feature map per tap.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let dev = x.device();
        let mean = Tensor::new(&IMAGENET_MEAN, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
        let mut h = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
        let mut out = Vec::with_capacity(self.taps.len());
        let last = *self.taps.last().expect("at least one tap");
        for (i, layer) in self.layers.iter().enumerate().take(last + 1) {
            h = match layer {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::Relu => h.relu()?,
                Layer::Pool => h.max_pool2d(2)?,
            };
            if self.taps.contains(&i) {
                out.push(h.clone());
            }
        }
        Ok(out)
    }
}
