//! Tone mapping, image-quality metrics and reports.

pub mod loss;
pub mod perceptual;
pub mod quality;
pub mod report;
pub mod tonemap;

pub use quality::{mse, psnr, psnr_from_mse, ssim, ssim_with, Domain, PSNR_CAP_DB};
pub use report::{evaluate_pair, evaluate_pairs, MetricReport, MetricRow, SkippedScene};
pub use tonemap::{clamp_count, TonemapParams};
pub use loss::{reconstruction_loss, LossConfig};
pub use perceptual::{Vgg19Features, DEFAULT_TAPS};
