use std::path::PathBuf;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::perceptual::{Vgg19Features, DEFAULT_TAPS};
use super::tonemap::TonemapParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub eta: f64,
    pub perceptual_enabled: bool,
    pub perceptual_layers: Vec<usize>,
    /// safetensors file with VGG-19 `features.*` weights.
    pub vgg_weights: Option<PathBuf>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eta: 0.005,
            perceptual_enabled: false,
            perceptual_layers: DEFAULT_TAPS.to_vec(),
            vgg_weights: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.perceptual_enabled && self.perceptual_layers.is_empty() {
            return Err(Error::Config("perceptual loss enabled without layers".into()));
        }
        Ok(())
    }
}

/// `mean|τ(gt) − τ(pred)| + η Σ_k mean|φ_k(τ(gt)) − φ_k(τ(pred))|`, the
/// second term only when `vgg` is given and the config enables it.
pub fn reconstruction_loss(
    pred: &Tensor,
    gt: &Tensor,
    config: &LossConfig,
    tonemap: &TonemapParams,
    vgg: Option<&Vgg19Features>,
) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("loss operands", gt.dims(), pred.dims()));
    }
    let tp = tonemap.apply_tensor(pred)?;
    let tg = tonemap.apply_tensor(&gt.detach().clamp(0.0, 1.0)?)?;
    let mut loss = (&tg - &tp)?.abs()?.mean_all()?;
    if config.perceptual_enabled && config.eta > 0.0 {
        let vgg = vgg.ok_or_else(|| {
            Error::Config("perceptual loss enabled but no VGG-19 weights were loaded".into())
        })?;
        let fp = vgg.features(&tp)?;
        let fg = vgg.features(&tg)?;
        for (a, b) in fp.iter().zip(&fg) {
            let term = (b.detach() - a)?.abs()?.mean_all()?;
            loss = (loss + (term * config.eta)?)?;
        }
    }
    Ok(loss)
}
