use super::feature::{BlockConfig, FeatureMap};
use super::layers::PointwiseMlp;
use super::params::ParamBuilder;
use crate::error::Result;

/// `f_x = MLP([f_u, f_xp, f_v]) + f_r` with a pointwise 3C → C MLP.
#[derive(Debug, Clone)]
pub struct ResidualFuse {
    mlp: PointwiseMlp,
}

impl ResidualFuse {
    pub fn new(b: &ParamBuilder, cfg: &BlockConfig) -> Result<Self> {
        let c = cfg.channels;
        Ok(Self {
            mlp: PointwiseMlp::new(&b.pp("mlp"), 3 * c, c, c)?,
        })
    }

    /// Zeroes the output layer so the block returns `f_r`.
    pub fn zero_mlp(&self) -> Result<()> {
        self.mlp.zero_output()
    }

    pub fn forward(
        &self,
        f_u: &FeatureMap,
        f_xp: &FeatureMap,
        f_v: &FeatureMap,
        f_r: &FeatureMap,
    ) -> Result<FeatureMap> {
        f_u.ensure_same(f_r, "residual_fuse inputs")?;
        let cat = FeatureMap::concat(&[f_u, f_xp, f_v])?;
        cat.ensure_channels(3 * f_r.channels(), "residual_fuse inputs")?;
        let out = self.mlp.forward(cat.nhwc())?;
        FeatureMap::from_nhwc((out + f_r.nhwc())?)
    }
}
