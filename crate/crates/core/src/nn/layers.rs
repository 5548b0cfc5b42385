use candle_core::{Tensor, Var, D};

use super::params::{Init, ParamBuilder};
use crate::error::Result;

/// `(B, C, H, W)` → contiguous `(B, H, W, C)`.
pub fn to_channels_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute((0, 2, 3, 1))?.contiguous()?)
}

/// `(B, H, W, C)` → contiguous `(B, C, H, W)`.
pub fn to_channels_first(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute((0, 3, 1, 2))?.contiguous()?)
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

/// `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok(x.exp()?.affine(1.0, 1.0)?.log()?)
}

/// Affine map over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Option<Var>,
}

impl Linear {
    pub fn new(b: &ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: b.var("weight", (out_dim, in_dim), Init::Uniform(bound))?,
            bias: Some(b.var("bias", out_dim, Init::Uniform(bound))?),
        })
    }

    pub fn no_bias(b: &ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: b.var("weight", (out_dim, in_dim), Init::Uniform(bound))?,
            bias: None,
        })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Sets weight and bias to zero, making the layer output identically 0.
    pub fn zero(&self) -> Result<()> {
        self.weight.set(&self.weight.zeros_like()?)?;
        if let Some(b) = &self.bias {
            b.set(&b.zeros_like()?)?;
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("linear input has rank >= 1");
        let rows = x.elem_count() / in_dim;
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out)?)
    }
}

/// Layer normalisation over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Var,
    bias: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(b: &ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: b.var("weight", dim, Init::Const(1.0))?,
            bias: b.var("bias", dim, Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        super::ops::layer_norm(x, self.weight.as_tensor(), self.bias.as_tensor(), self.eps)
    }
}

/// Square-kernel 2-D convolution with "same" zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    padding: usize,
}

impl Conv2d {
    pub fn new(b: &ParamBuilder, in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        Ok(Self {
            weight: b.var("weight", (out_ch, in_ch, kernel, kernel), Init::Uniform(bound))?,
            bias: b.var("bias", out_ch, Init::Uniform(bound))?,
            padding: kernel / 2,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn zero(&self) -> Result<()> {
        self.weight.set(&self.weight.zeros_like()?)?;
        self.bias.set(&self.bias.zeros_like()?)?;
        Ok(())
    }

    pub fn zero_bias(&self) -> Result<()> {
        self.bias.set(&self.bias.zeros_like()?)?;
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
enum MlpKind {
    Learned { fc1: Linear, fc2: Linear },
    Identity,
}

/// Per-pixel two-layer MLP over the last (channel) axis.
#[derive(Debug, Clone)]
pub struct PointwiseMlp {
    kind: MlpKind,
}

impl PointwiseMlp {
    pub fn new(b: &ParamBuilder, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            kind: MlpKind::Learned {
                fc1: Linear::new(&b.pp("fc1"), in_dim, hidden)?,
                fc2: Linear::new(&b.pp("fc2"), hidden, out_dim)?,
            },
        })
    }

    /// Test hook: replaces the MLP with the identity map.
    pub fn make_identity(&mut self) {
        self.kind = MlpKind::Identity;
    }

    /// Zeroes the output layer so the MLP returns exactly 0.
    pub fn zero_output(&self) -> Result<()> {
        if let MlpKind::Learned { fc2, .. } = &self.kind {
            fc2.zero()?;
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.kind {
            MlpKind::Learned { fc1, fc2 } => fc2.forward(&gelu(&fc1.forward(x)?)?),
            MlpKind::Identity => Ok(x.clone()),
        }
    }
}

/// Transformer feed-forward: `fc2(gelu(fc1(x)))`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    mlp: PointwiseMlp,
}

impl FeedForward {
    pub fn new(b: &ParamBuilder, dim: usize, expansion: f64) -> Result<Self> {
        let hidden = ((dim as f64) * expansion).round().max(1.0) as usize;
        Ok(Self {
            mlp: PointwiseMlp::new(b, dim, hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.forward(x)
    }
}

/// Gated feed-forward: `out(gelu(a) ⊙ b)` with `[a, b] = in(x)`.
#[derive(Debug, Clone)]
pub struct GatedFeedForward {
    project_in: Linear,
    project_out: Linear,
    hidden: usize,
}

impl GatedFeedForward {
    pub fn new(b: &ParamBuilder, dim: usize, expansion: f64) -> Result<Self> {
        let hidden = ((dim as f64) * expansion).round().max(1.0) as usize;
        Ok(Self {
            project_in: Linear::new(&b.pp("project_in"), dim, 2 * hidden)?,
            project_out: Linear::new(&b.pp("project_out"), hidden, dim)?,
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.project_in.forward(x)?;
        let gate = h.narrow(D::Minus1, 0, self.hidden)?;
        let value = h.narrow(D::Minus1, self.hidden, self.hidden)?;
        self.project_out.forward(&(gelu(&gate)? * value)?)
    }
}
