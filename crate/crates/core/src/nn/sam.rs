use std::sync::Arc;

use super::feature::{BlockConfig, BlockKind, CallCounters, FeatureMap};
use super::layers::PointwiseMlp;
use super::params::ParamBuilder;
use super::window::WindowTransformerBlock;
use crate::error::Result;

/// Spatial alignment: window cross-attention whose keys and values see
/// `f_align + MLP_D(f_x)`.
#[derive(Debug, Clone)]
pub struct Sam {
    block: WindowTransformerBlock,
    degradation: PointwiseMlp,
    counters: Arc<CallCounters>,
}

impl Sam {
    pub fn new(b: &ParamBuilder, cfg: &BlockConfig, counters: &Arc<CallCounters>) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            block: WindowTransformerBlock::new(&b.pp("block"), c, cfg)?,
            degradation: PointwiseMlp::new(&b.pp("mlp_d"), c, 2 * c, c)?,
            counters: counters.clone(),
        })
    }

    pub fn block(&self) -> &WindowTransformerBlock {
        &self.block
    }

    pub fn degradation(&self) -> &PointwiseMlp {
        &self.degradation
    }

    pub fn forward(&self, f_align: &FeatureMap, f_x: &FeatureMap) -> Result<FeatureMap> {
        self.counters.record(BlockKind::Sam);
        f_align.ensure_same(f_x, "sam inputs")?;
        let context = f_align.add(&f_x.map(|t| self.degradation.forward(t))?)?;
        self.block.forward_with_context(f_align, &context)
    }
}
