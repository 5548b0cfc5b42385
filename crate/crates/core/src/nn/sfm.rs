use std::sync::Arc;

use super::feature::{BlockConfig, BlockKind, CallCounters, FeatureMap};
use super::params::ParamBuilder;
use super::window::WindowTransformerBlock;
use crate::error::Result;

/// Spatial fusion: one window self-attention block over the 3C-channel
/// concatenation, split back into `(f_us, f_r, f_vs)`.
#[derive(Debug, Clone)]
pub struct Sfm {
    block: WindowTransformerBlock,
    bypass: bool,
    counters: Arc<CallCounters>,
}

impl Sfm {
    pub fn new(b: &ParamBuilder, cfg: &BlockConfig, counters: &Arc<CallCounters>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            block: WindowTransformerBlock::new(&b.pp("block"), 3 * cfg.channels, cfg)?,
            bypass: false,
            counters: counters.clone(),
        })
    }

    /// Test hook: replaces the transformer with the identity.
    pub fn bypass_transformer(&mut self, on: bool) {
        self.bypass = on;
    }

    pub fn forward(
        &self,
        f_a1: &FeatureMap,
        f_x: &FeatureMap,
        f_a3: &FeatureMap,
    ) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
        self.counters.record(BlockKind::Sfm);
        f_a1.ensure_same(f_x, "sfm inputs")?;
        f_a3.ensure_same(f_x, "sfm inputs")?;
        let cat = FeatureMap::concat(&[f_a1, f_x, f_a3])?;
        let fused = if self.bypass { cat } else { self.block.forward(&cat)? };
        let mut parts = fused.split(3)?.into_iter();
        let (us, r, vs) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
        Ok((us, r, vs))
    }
}
