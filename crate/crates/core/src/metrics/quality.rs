//! PSNR and SSIM in the linear and μ-law domains.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::tonemap::TonemapParams;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::Image;

/// Reported PSNR when the images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Linear radiance, predictions clamped to `[0, 1]`.
    Linear,
    /// μ-law tone mapped.
    Mu,
}

fn check_same(pred: &Image, gt: &Image) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::shape("metric operands", gt.shape(), pred.shape()));
    }
    Ok(())
}

/// Both operands mapped into the metric domain.
pub fn to_domain(pred: &Image, gt: &Image, domain: Domain, tm: &TonemapParams) -> (Image, Image) {
    let pred = pred.mapv(|v| v.clamp(0.0, 1.0));
    match domain {
        Domain::Linear => (pred, gt.clone()),
        Domain::Mu => (tm.apply(&pred), tm.apply(gt)),
    }
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    let n = a.len() as f64;
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y)) / n
}

/// `10·log10(1 / MSE)` with unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(pred: &Image, gt: &Image, domain: Domain, tm: &TonemapParams) -> Result<f64> {
    check_same(pred, gt)?;
    let (p, g) = to_domain(pred, gt, domain, tm);
    Ok(psnr_from_mse(mse(&p, &g)))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Channel mean of a `(C, H, W)` image.
pub fn grayscale(img: &Image) -> Array2<f64> {
    img.mean_axis(Axis(0)).expect("at least one channel")
}

/// Mean SSIM over all valid window positions of two single-channel images.
pub fn ssim_gray(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mode: ExecMode) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("ssim operands", b.shape(), a.shape()));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    // Horizontal pass for the five moment images, one input row at a time.
    let horiz = |row: usize| -> [Vec<f64>; 5] {
        let mut out = [
            vec![0.0; ow],
            vec![0.0; ow],
            vec![0.0; ow],
            vec![0.0; ow],
            vec![0.0; ow],
        ];
        for j in 0..ow {
            let mut acc = [0.0; 5];
            for (k, &t) in g.iter().enumerate() {
                let x = a[[row, j + k]];
                let y = b[[row, j + k]];
                acc[0] += t * x;
                acc[1] += t * y;
                acc[2] += t * x * x;
                acc[3] += t * y * y;
                acc[4] += t * x * y;
            }
            for m in 0..5 {
                out[m][j] = acc[m];
            }
        }
        out
    };
    let rows = exec::map_range(mode, h, horiz);

    let row_sums = exec::map_range(mode, oh, |i| {
        let mut sum = 0.0;
        for j in 0..ow {
            let mut m = [0.0; 5];
            for (k, &t) in g.iter().enumerate() {
                let r = &rows[i + k];
                for q in 0..5 {
                    m[q] += t * r[q][j];
                }
            }
            let (mu1, mu2) = (m[0], m[1]);
            let s11 = m[2] - mu1 * mu1;
            let s22 = m[3] - mu2 * mu2;
            let s12 = m[4] - mu1 * mu2;
            sum += ((2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2))
                / ((mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2));
        }
        sum
    });
    Ok(row_sums.iter().sum::<f64>() / (oh * ow) as f64)
}

/// SSIM on the channel-mean grayscale of both images.
pub fn ssim(pred: &Image, gt: &Image, domain: Domain, tm: &TonemapParams) -> Result<f64> {
    ssim_with(pred, gt, domain, tm, ExecMode::preferred())
}

pub fn ssim_with(
    pred: &Image,
    gt: &Image,
    domain: Domain,
    tm: &TonemapParams,
    mode: ExecMode,
) -> Result<f64> {
    check_same(pred, gt)?;
    let (p, g) = to_domain(pred, gt, domain, tm);
    ssim_gray(grayscale(&p).view(), grayscale(&g).view(), mode)
}
