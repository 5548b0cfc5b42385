use std::sync::Arc;

use candle_core::{Tensor, Var, D};

use super::feature::{BlockConfig, BlockKind, CallCounters, FeatureMap};
use super::layers::{GatedFeedForward, LayerNorm, Linear};
use super::params::{Init, ParamBuilder};
use crate::error::Result;

/// Transposed (channel-by-channel) attention: queries from one map, keys and
/// values from another, attention over `C/heads × C/heads` per head.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    temperature: Var,
    heads: usize,
}

fn l2_normalize_last(t: &Tensor) -> Result<Tensor> {
    let norm = t.sqr()?.sum_keepdim(D::Minus1)?.affine(1.0, 1e-12)?.sqrt()?;
    Ok(t.broadcast_div(&norm)?)
}

impl ChannelAttention {
    pub fn new(b: &ParamBuilder, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&b.pp("q"), dim, dim)?,
            k: Linear::new(&b.pp("k"), dim, dim)?,
            v: Linear::new(&b.pp("v"), dim, dim)?,
            proj: Linear::new(&b.pp("proj"), dim, dim)?,
            temperature: b.var("temperature", (heads, 1, 1), Init::Const(1.0))?,
            heads,
        })
    }

    pub fn value(&self) -> &Linear {
        &self.v
    }

    pub fn output(&self) -> &Linear {
        &self.proj
    }

    /// `(B, N, C)` token tensor → `(B, heads, C/heads, N)`.
    fn split_heads(&self, t: &Tensor) -> Result<Tensor> {
        let (b, n, c) = t.dims3()?;
        Ok(t.reshape((b, n, self.heads, c / self.heads))?
            .permute((0, 2, 3, 1))?
            .contiguous()?)
    }

    /// Both arguments are `(B, N, C)` token tensors.
    pub fn forward(&self, query: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (b, n, c) = query.dims3()?;
        let q = l2_normalize_last(&self.split_heads(&self.q.forward(query)?)?)?;
        let k = l2_normalize_last(&self.split_heads(&self.k.forward(context)?)?)?;
        let v = self.split_heads(&self.v.forward(context)?)?;
        let scores = q
            .matmul(&k.t()?)?
            .broadcast_mul(&self.temperature.unsqueeze(0)?)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = attn.matmul(&v)?.permute((0, 3, 1, 2))?.contiguous()?.reshape((b, n, c))?;
        self.proj.forward(&out)
    }
}

/// Channel fusion: refines a spatially fused feature against `f_x`, which is
/// only read.
#[derive(Debug, Clone)]
pub struct Cfm {
    norm_s: LayerNorm,
    norm_x: LayerNorm,
    attn: ChannelAttention,
    norm_ffn: LayerNorm,
    ffn: GatedFeedForward,
    counters: Arc<CallCounters>,
}

impl Cfm {
    pub fn new(b: &ParamBuilder, cfg: &BlockConfig, counters: &Arc<CallCounters>) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            norm_s: LayerNorm::new(&b.pp("norm_s"), c)?,
            norm_x: LayerNorm::new(&b.pp("norm_x"), c)?,
            attn: ChannelAttention::new(&b.pp("attn"), c, cfg.num_heads)?,
            norm_ffn: LayerNorm::new(&b.pp("norm_ffn"), c)?,
            ffn: GatedFeedForward::new(&b.pp("ffn"), c, cfg.ffn_expansion)?,
            counters: counters.clone(),
        })
    }

    pub fn attention(&self) -> &ChannelAttention {
        &self.attn
    }

    pub fn forward(&self, f_s: &FeatureMap, f_x: &FeatureMap) -> Result<FeatureMap> {
        self.counters.record(BlockKind::Cfm);
        f_s.ensure_same(f_x, "cfm inputs")?;
        let (b, c, h, w) = f_s.dims();
        let s = f_s.nhwc().reshape((b, h * w, c))?;
        let x = f_x.nhwc().reshape((b, h * w, c))?;
        let a = self
            .attn
            .forward(&self.norm_s.forward(&s)?, &self.norm_x.forward(&x)?)?;
        let y = (s + a)?;
        let y = (&y + self.ffn.forward(&self.norm_ffn.forward(&y)?)?)?;
        FeatureMap::from_nhwc(y.reshape((b, h, w, c))?)
    }
}
