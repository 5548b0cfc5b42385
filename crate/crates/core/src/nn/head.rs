use candle_core::Tensor;

use super::feature::FeatureMap;
use super::layers::Conv2d;
use super::params::ParamBuilder;
use crate::error::{Error, Result};

pub const INPUT_CHANNELS: usize = 6;

/// Shallow feature extraction: a 3×3 convolution from the 6-channel input.
#[derive(Debug, Clone)]
pub struct Sfem {
    conv: Conv2d,
}

impl Sfem {
    pub fn new(b: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&b.pp("conv"), INPUT_CHANNELS, channels, 3)?,
        })
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    /// `y` is `(B, 6, H, W)`.
    pub fn forward(&self, y: &Tensor) -> Result<FeatureMap> {
        let dims = y.dims();
        if dims.len() != 4 || dims[1] != INPUT_CHANNELS {
            return Err(Error::shape("sfem input", &[INPUT_CHANNELS], &dims[1.min(dims.len())..]));
        }
        FeatureMap::from_nchw(&self.conv.forward(y)?)
    }
}

/// `x̂ = σ(conv_out(f_xT + conv_y(f_y2)))`, three channels in `(0, 1)`.
#[derive(Debug, Clone)]
pub struct ReconHead {
    conv_y: Conv2d,
    conv_out: Conv2d,
}

impl ReconHead {
    pub fn new(b: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            conv_y: Conv2d::new(&b.pp("conv_y"), channels, channels, 3)?,
            conv_out: Conv2d::new(&b.pp("conv_out"), channels, 3, 3)?,
        })
    }

    pub fn zero(&self) -> Result<()> {
        self.conv_y.zero()?;
        self.conv_out.zero()
    }

    /// Returns `(B, 3, H, W)`.
    pub fn forward(&self, f_xt: &FeatureMap, f_y2: &FeatureMap) -> Result<Tensor> {
        f_xt.ensure_same(f_y2, "recon_head inputs")?;
        let y = self.conv_y.forward(&f_y2.to_nchw()?)?;
        let z = self.conv_out.forward(&(f_xt.to_nchw()? + y)?)?;
        Ok(candle_nn::ops::sigmoid(&z)?)
    }
}
