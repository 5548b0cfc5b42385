use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature tensor with logical shape `(B, C, H, W)`.
///
/// Stored channels-last so that every pointwise layer is a single matmul;
/// [`FeatureMap::to_nchw`] and [`FeatureMap::from_nchw`] convert at
/// convolution boundaries.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    data: Tensor,
}

impl FeatureMap {
    pub fn from_nchw(t: &Tensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::shape("feature map rank", &[4], &[t.rank()]));
        }
        Ok(Self {
            data: t.permute((0, 2, 3, 1))?.contiguous()?,
        })
    }

    /// Wraps a `(B, H, W, C)` tensor.
    pub fn from_nhwc(t: Tensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::shape("feature map rank", &[4], &[t.rank()]));
        }
        Ok(Self { data: t })
    }

    pub fn nhwc(&self) -> &Tensor {
        &self.data
    }

    pub fn into_nhwc(self) -> Tensor {
        self.data
    }

    pub fn to_nchw(&self) -> Result<Tensor> {
        Ok(self.data.permute((0, 3, 1, 2))?.contiguous()?)
    }

    /// `(B, C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.data.dims();
        (d[0], d[3], d[1], d[2])
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[3]
    }

    pub fn ensure_same(&self, other: &FeatureMap, what: &'static str) -> Result<()> {
        if self.data.dims() != other.data.dims() {
            let (a, b) = (self.dims(), other.dims());
            return Err(Error::shape(what, &[a.0, a.1, a.2, a.3], &[b.0, b.1, b.2, b.3]));
        }
        Ok(())
    }

    pub fn ensure_channels(&self, c: usize, what: &'static str) -> Result<()> {
        if self.channels() != c {
            return Err(Error::shape(what, &[c], &[self.channels()]));
        }
        Ok(())
    }

    pub fn map(&self, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Ok(Self { data: f(&self.data)? })
    }

    pub fn add(&self, other: &FeatureMap) -> Result<Self> {
        self.ensure_same(other, "feature sum")?;
        Ok(Self {
            data: (&self.data + &other.data)?,
        })
    }

    /// Concatenation along channels.
    pub fn concat(maps: &[&FeatureMap]) -> Result<Self> {
        for m in &maps[1..] {
            let (a, b) = (maps[0].dims(), m.dims());
            if (a.0, a.2, a.3) != (b.0, b.2, b.3) {
                return Err(Error::shape("channel concat", &[a.0, a.2, a.3], &[b.0, b.2, b.3]));
            }
        }
        let ts: Vec<&Tensor> = maps.iter().map(|m| &m.data).collect();
        Ok(Self {
            data: Tensor::cat(&ts, D::Minus1)?,
        })
    }

    /// Splits channels into `parts` equal maps.
    pub fn split(&self, parts: usize) -> Result<Vec<Self>> {
        let c = self.channels();
        if parts == 0 || c % parts != 0 {
            return Err(Error::Config(format!("cannot split {c} channels into {parts} parts")));
        }
        let w = c / parts;
        (0..parts)
            .map(|i| {
                Ok(Self {
                    data: self.data.narrow(D::Minus1, i * w, w)?,
                })
            })
            .collect()
    }

    /// True if every element is finite.
    pub fn is_finite(&self) -> Result<bool> {
        let v = self.data.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
        Ok(v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub channels: usize,
    pub window_size: usize,
    pub num_heads: usize,
    pub ffn_expansion: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            window_size: 8,
            num_heads: 4,
            ffn_expansion: 2.0,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.window_size == 0 || self.num_heads == 0 {
            return Err(Error::Config(
                "channels, window_size and num_heads must be positive".into(),
            ));
        }
        if self.channels % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "channels ({}) must be divisible by num_heads ({})",
                self.channels, self.num_heads
            )));
        }
        if !(self.ffn_expansion > 0.0 && self.ffn_expansion.is_finite()) {
            return Err(Error::Config(format!(
                "ffn_expansion must be positive, got {}",
                self.ffn_expansion
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Sam,
    Sfm,
    Cfm,
    Dcm,
}

/// Forward-call instrumentation shared by all blocks of one model.
#[derive(Debug, Default)]
pub struct CallCounters {
    sam: AtomicUsize,
    sfm: AtomicUsize,
    cfm: AtomicUsize,
    dcm: AtomicUsize,
}

impl CallCounters {
    fn slot(&self, kind: BlockKind) -> &AtomicUsize {
        match kind {
            BlockKind::Sam => &self.sam,
            BlockKind::Sfm => &self.sfm,
            BlockKind::Cfm => &self.cfm,
            BlockKind::Dcm => &self.dcm,
        }
    }

    pub fn record(&self, kind: BlockKind) {
        self.slot(kind).fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, kind: BlockKind) -> usize {
        self.slot(kind).load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        for k in [BlockKind::Sam, BlockKind::Sfm, BlockKind::Cfm, BlockKind::Dcm] {
            self.slot(k).store(0, Ordering::Relaxed);
        }
    }
}
