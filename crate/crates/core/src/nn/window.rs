//! Non-overlapping window attention.

use candle_core::{Tensor, D};

use super::feature::{BlockConfig, FeatureMap};
use super::layers::{FeedForward, LayerNorm, Linear};
use super::ops::bias_softmax;
use super::params::{Init, ParamBuilder};
use crate::error::{Error, Result};

pub(crate) fn check_window(ws: usize, h: usize, w: usize) -> Result<()> {
    if h % ws != 0 || w % ws != 0 {
        return Err(Error::Config(format!(
            "spatial size {h}x{w} is not a multiple of window size {ws}"
        )));
    }
    Ok(())
}

/// `(B, H, W, C)` → `(B·nW, ws², C)`.
pub fn window_partition(x: &Tensor, ws: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    check_window(ws, h, w)?;
    Ok(x.reshape((b, h / ws, ws, w / ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b * (h / ws) * (w / ws), ws * ws, c))?)
}

/// Inverse of [`window_partition`].
pub fn window_reverse(windows: &Tensor, ws: usize, b: usize, h: usize, w: usize) -> Result<Tensor> {
    let c = windows.dim(D::Minus1)?;
    Ok(windows
        .reshape((b, h / ws, w / ws, ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, h, w, c))?)
}

/// Flat index into the `(2ws − 1)²` offset table for every token pair.
pub fn relative_position_index(ws: usize) -> Vec<u32> {
    let n = ws * ws;
    let span = 2 * ws - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (ri, ci) = (i / ws, i % ws);
        for j in 0..n {
            let (rj, cj) = (j / ws, j % ws);
            idx.push(((ri + ws - 1 - rj) * span + (ci + ws - 1 - cj)) as u32);
        }
    }
    idx
}

/// Multi-head attention inside windows with a learned relative position bias.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    bias_table: candle_core::Var,
    bias_index: Tensor,
    heads: usize,
    window: usize,
}

impl WindowAttention {
    pub fn new(b: &ParamBuilder, dim: usize, heads: usize, window: usize) -> Result<Self> {
        let span = 2 * window - 1;
        let index = relative_position_index(window);
        Ok(Self {
            q: Linear::new(&b.pp("q"), dim, dim)?,
            k: Linear::no_bias(&b.pp("k"), dim, dim)?,
            v: Linear::new(&b.pp("v"), dim, dim)?,
            proj: Linear::new(&b.pp("proj"), dim, dim)?,
            bias_table: b.var("relative_position_bias", (span * span, heads), Init::Uniform(0.02))?,
            bias_index: Tensor::from_vec(index, window.pow(4), &b.device())?,
            heads,
            window,
        })
    }

    pub fn value(&self) -> &Linear {
        &self.v
    }

    pub fn output(&self) -> &Linear {
        &self.proj
    }

    fn bias(&self) -> Result<Tensor> {
        let n = self.window * self.window;
        Ok(self
            .bias_table
            .index_select(&self.bias_index, 0)?
            .reshape((n, n, self.heads))?
            .permute((2, 0, 1))?
            .contiguous()?)
    }

    fn heads_first(&self, t: &Tensor) -> Result<Tensor> {
        let (nw, l, c) = t.dims3()?;
        Ok(t.reshape((nw, l, self.heads, c / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Queries from `query`, keys and values from `context`; both shaped
    /// `(nW, ws², C)`.
    pub fn forward(&self, query: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (nw, l, c) = query.dims3()?;
        let d = c / self.heads;
        let q = self.heads_first(&(self.q.forward(query)? * (1.0 / (d as f64).sqrt()))?)?;
        let k = self.heads_first(&self.k.forward(context)?)?;
        let v = self.heads_first(&self.v.forward(context)?)?;
        let attn = bias_softmax(&q.matmul(&k.t()?)?, &self.bias()?)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((nw, l, c))?;
        self.proj.forward(&out)
    }
}

/// Pre-norm transformer block: windowed attention then feed-forward, each
/// with a residual connection.
#[derive(Debug, Clone)]
pub struct WindowTransformerBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    ffn: FeedForward,
    window: usize,
}

impl WindowTransformerBlock {
    pub fn new(b: &ParamBuilder, dim: usize, cfg: &BlockConfig) -> Result<Self> {
        if dim % cfg.num_heads != 0 {
            return Err(Error::Config(format!(
                "width {dim} is not divisible by {} heads",
                cfg.num_heads
            )));
        }
        Ok(Self {
            norm1: LayerNorm::new(&b.pp("norm1"), dim)?,
            attn: WindowAttention::new(&b.pp("attn"), dim, cfg.num_heads, cfg.window_size)?,
            norm2: LayerNorm::new(&b.pp("norm2"), dim)?,
            ffn: FeedForward::new(&b.pp("ffn"), dim, cfg.ffn_expansion)?,
            window: cfg.window_size,
        })
    }

    pub fn attention(&self) -> &WindowAttention {
        &self.attn
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Window self-attention.
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.forward_with_context(x, x)
    }

    /// Window cross-attention with keys and values taken from `context`.
    pub fn forward_with_context(&self, x: &FeatureMap, context: &FeatureMap) -> Result<FeatureMap> {
        x.ensure_same(context, "attention context")?;
        let t = x.nhwc();
        let (b, h, w, _) = t.dims4()?;
        check_window(self.window, h, w)?;
        let qn = window_partition(&self.norm1.forward(t)?, self.window)?;
        let kn = window_partition(&self.norm1.forward(context.nhwc())?, self.window)?;
        let attn = self.attn.forward(&qn, &kn)?;
        let y = (t + window_reverse(&attn, self.window, b, h, w)?)?;
        let y = (&y + self.ffn.forward(&self.norm2.forward(&y)?)?)?;
        FeatureMap::from_nhwc(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn partition_round_trip() {
        let x = Tensor::arange(0f64, 2.0 * 4.0 * 6.0 * 3.0, &Device::Cpu)
            .unwrap()
            .reshape((2, 4, 6, 3))
            .unwrap();
        let w = window_partition(&x, 2).unwrap();
        assert_eq!(w.dims(), &[12, 4, 3]);
        let back = window_reverse(&w, 2, 2, 4, 6).unwrap();
        let diff = (back - &x).unwrap().abs().unwrap().sum_all().unwrap();
        assert_eq!(diff.to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn partition_groups_window_pixels() {
        let x = Tensor::arange(0f64, 16.0, &Device::Cpu)
            .unwrap()
            .reshape((1, 4, 4, 1))
            .unwrap();
        let w = window_partition(&x, 2).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(&w[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&w[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn relative_index_is_symmetric_in_range() {
        let idx = relative_position_index(3);
        assert_eq!(idx.len(), 81);
        assert!(idx.iter().all(|&i| i < 25));
        // Zero offset sits in the centre of the table.
        assert!((0..9).all(|i| idx[i * 9 + i] == 12));
    }

    #[test]
    fn indivisible_window_rejected() {
        let b = ParamBuilder::new(0, DType::F64, &Device::Cpu);
        let cfg = BlockConfig {
            channels: 4,
            window_size: 4,
            num_heads: 2,
            ffn_expansion: 2.0,
        };
        let blk = WindowTransformerBlock::new(&b, 4, &cfg).unwrap();
        let x = FeatureMap::from_nhwc(Tensor::zeros((1, 6, 8, 4), DType::F64, &Device::Cpu).unwrap())
            .unwrap();
        assert!(blk.forward(&x).is_err());
    }
}
