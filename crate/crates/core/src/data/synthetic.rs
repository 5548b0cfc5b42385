//! Synthetic bracketed exposures with a known latent radiance map.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{ExposureStack, GAMMA, REFERENCE};
use crate::error::{Error, Result};
use crate::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Latent HDR image `x*`, `(3, H, W)`, nonnegative.
    pub latent: Image,
    /// Exposure gains `t_i`; the reference is normally 1.
    pub gains: [f64; 3],
    pub clip: f64,
    pub gamma: f64,
    /// Integer `(dy, dx)` translation of the two non-reference exposures.
    pub offsets: [(isize, isize); 2],
    pub noise_sigma: f64,
}

impl SyntheticScene {
    pub fn new(latent: Image) -> Self {
        Self {
            latent,
            gains: [0.25, 1.0, 4.0],
            clip: 1.0,
            gamma: GAMMA,
            offsets: [(0, 0); 2],
            noise_sigma: 0.0,
        }
    }
}

/// Parameters for [`smooth_latent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentStyle {
    pub blobs: usize,
    pub min: f64,
    pub max: f64,
}

impl Default for LatentStyle {
    fn default() -> Self {
        Self {
            blobs: 6,
            min: 0.02,
            max: 0.95,
        }
    }
}

/// A smooth colour field: a linear ramp plus Gaussian blobs, rescaled per
/// channel into `[style.min, style.max]`.
pub fn smooth_latent<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    style: &LatentStyle,
    rng: &mut R,
) -> Image {
    let mut img = Image::zeros((3, height, width));
    let (hf, wf) = (height as f64, width as f64);
    for c in 0..3 {
        let gy: f64 = rng.random_range(-1.0..1.0);
        let gx: f64 = rng.random_range(-1.0..1.0);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..style.blobs)
            .map(|_| {
                (
                    rng.random_range(0.0..hf),
                    rng.random_range(0.0..wf),
                    rng.random_range(0.08..0.3) * hf.max(wf),
                    rng.random_range(-1.0..1.5),
                )
            })
            .collect();
        let mut plane = img.index_axis_mut(ndarray::Axis(0), c);
        plane.indexed_iter_mut().for_each(|((i, j), v)| {
            let (y, x) = (i as f64, j as f64);
            let mut acc = gy * y / hf + gx * x / wf;
            for &(cy, cx, r, a) in &blobs {
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                acc += a * (-d2 / (2.0 * r * r)).exp();
            }
            *v = acc;
        });
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        plane.mapv_inplace(|v| style.min + (style.max - style.min) * (v - lo) / span);
    }
    img
}

/// Circular translation of the spatial axes by `(dy, dx)`.
pub fn translate(img: &Image, (dy, dx): (isize, isize)) -> Image {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h, w), |(k, i, j)| {
        let si = (i as isize - dy).rem_euclid(h as isize) as usize;
        let sj = (j as isize - dx).rem_euclid(w as isize) as usize;
        img[[k, si, sj]]
    })
}

/// `L_i = clip(clip(x*·t_i, 0, clip)^(1/γ) + n, 0, 1)`, with the latent
/// translated for the non-reference exposures. The latent is recorded as the
/// ground truth and `ev_i = log2 t_i`.
pub fn generate_synthetic<R: Rng + ?Sized>(
    name: impl Into<String>,
    scene: &SyntheticScene,
    rng: &mut R,
) -> Result<ExposureStack> {
    if scene.latent.dim().0 != 3 {
        return Err(Error::Config("synthetic latent must have 3 channels".into()));
    }
    if scene.latent.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Config("synthetic latent must be finite and nonnegative".into()));
    }
    if scene.gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::Config(format!("invalid gains {:?}", scene.gains)));
    }
    if !(scene.clip > 0.0 && scene.gamma > 0.0 && scene.noise_sigma >= 0.0) {
        return Err(Error::Config("clip and gamma must be positive, noise nonnegative".into()));
    }
    let noise = Normal::new(0.0, scene.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let inv_gamma = 1.0 / scene.gamma;
    let mut expose = |i: usize| -> Image {
        let shifted = match i {
            REFERENCE => scene.latent.clone(),
            0 => translate(&scene.latent, scene.offsets[0]),
            _ => translate(&scene.latent, scene.offsets[1]),
        };
        let gain = scene.gains[i];
        shifted.mapv(|x| {
            let mut l = (x * gain).clamp(0.0, scene.clip).powf(inv_gamma);
            if scene.noise_sigma > 0.0 {
                l += noise.sample(rng);
            }
            l.clamp(0.0, 1.0)
        })
    };
    let ldr = [expose(0), expose(1), expose(2)];
    let ev = scene.gains.map(f64::log2);
    ExposureStack::new(name, ldr, ev, Some(scene.latent.clone()), scene.gamma)
}
