//! Whole-scene reconstruction and scoring.

use candle_core::{DType, Device, Tensor};

use crate::data::{array3_to_tensor, tensor_to_array3, ExposureStack};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::metrics::{evaluate_pairs, MetricReport, TonemapParams};
use crate::model::Afunet;
use crate::Image;

/// Anything that turns an exposure stack into a linear HDR estimate.
pub trait Reconstructor {
    fn reconstruct(&self, stack: &ExposureStack) -> Result<Image>;
}

fn stack_inputs(stack: &ExposureStack, device: &Device, dtype: DType) -> Result<[Tensor; 3]> {
    let [a, b, c] = stack.inputs();
    Ok([
        array3_to_tensor(&a, device, dtype)?,
        array3_to_tensor(&b, device, dtype)?,
        array3_to_tensor(&c, device, dtype)?,
    ])
}

impl Reconstructor for Afunet {
    fn reconstruct(&self, stack: &ExposureStack) -> Result<Image> {
        let [y1, y2, y3] = stack_inputs(stack, self.device(), self.dtype())?;
        let out = self.forward(&y1, &y2, &y3)?;
        tensor_to_array3(&out, 0)
    }
}

/// Returns the ground truth; scenes without one are an error.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthEcho;

impl Reconstructor for GroundTruthEcho {
    fn reconstruct(&self, stack: &ExposureStack) -> Result<Image> {
        stack.gt.clone().ok_or_else(|| Error::Missing {
            path: stack.name.clone().into(),
            what: "ground truth".into(),
        })
    }
}

/// Returns the reference exposure's linear companion `H2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceEcho;

impl Reconstructor for ReferenceEcho {
    fn reconstruct(&self, stack: &ExposureStack) -> Result<Image> {
        Ok(stack.linear[crate::data::REFERENCE].clone())
    }
}

/// Reconstructs every scene with ground truth and scores it. Scenes without
/// ground truth are recorded as skipped.
pub fn evaluate<R: Reconstructor + ?Sized>(
    model: &R,
    scenes: &[ExposureStack],
    tonemap: &TonemapParams,
    mode: ExecMode,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    let mut pairs = Vec::new();
    for s in scenes {
        match &s.gt {
            Some(gt) => pairs.push((s.name.clone(), model.reconstruct(s)?, gt.clone())),
            None => report.skip(&s.name, "no ground truth"),
        }
    }
    for row in evaluate_pairs(&pairs, tonemap, mode)? {
        report.push(row);
    }
    Ok(report)
}
