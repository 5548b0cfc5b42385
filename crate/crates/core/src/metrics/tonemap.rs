use std::sync::atomic::{AtomicU64, Ordering};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Image;

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of values above 1 that [`TonemapParams::apply`] has clamped in this
/// process.
pub fn clamp_count() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

/// μ-law compressor `τ(x) = ln(1 + μx) / ln(1 + μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTonemap", into = "RawTonemap")]
pub struct TonemapParams {
    mu: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTonemap {
    mu: f64,
}

impl TryFrom<RawTonemap> for TonemapParams {
    type Error = Error;
    fn try_from(raw: RawTonemap) -> Result<Self> {
        Self::new(raw.mu)
    }
}

impl From<TonemapParams> for RawTonemap {
    fn from(p: TonemapParams) -> Self {
        RawTonemap { mu: p.mu }
    }
}

impl Default for TonemapParams {
    fn default() -> Self {
        Self { mu: 5000.0 }
    }
}

impl TonemapParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("tone-mapping mu must be > 0, got {mu}")));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `τ(x)` for `x` in `[0, 1]`; no clamping.
    pub fn curve(&self, x: f64) -> f64 {
        (1.0 + self.mu * x).ln() / (1.0 + self.mu).ln()
    }

    /// Elementwise `τ`, clamping into `[0, 1]` first. Values above 1 are
    /// counted (see [`clamp_count`]).
    pub fn apply(&self, x: &Image) -> Image {
        let over = x.iter().filter(|&&v| v > 1.0).count() as u64;
        if over > 0 {
            let before = CLAMPED.fetch_add(over, Ordering::Relaxed);
            if before == 0 {
                log::warn!("tone mapping clamped {over} values above 1");
            }
        }
        x.mapv(|v| self.curve(v.clamp(0.0, 1.0)))
    }

    /// Differentiable `τ` on a tensor of nonnegative values.
    pub fn apply_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let denom = (1.0 + self.mu).ln();
        Ok(x.affine(self.mu, 1.0)?.log()?.affine(1.0 / denom, 0.0)?)
    }
}
