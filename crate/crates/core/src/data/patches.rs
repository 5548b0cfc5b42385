use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::ExposureStack;
use crate::error::{Error, Result};

/// The eight symmetries of the square: `rot` quarter turns
/// (counter-clockwise) applied after an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rot: 0 };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (k, d) in out.iter_mut().enumerate() {
            *d = Dihedral {
                flip: k >= 4,
                rot: (k % 4) as u8,
            };
        }
        out
    }

    pub fn index(self) -> usize {
        self.flip as usize * 4 + self.rot as usize
    }

    /// Applies the transform to the two trailing (spatial) axes.
    pub fn apply(self, img: ArrayView3<'_, f64>) -> Array3<f64> {
        let mut v = img;
        if self.flip {
            v.invert_axis(Axis(2));
        }
        for _ in 0..self.rot {
            // counter-clockwise quarter turn: out[i][j] = in[j][W-1-i]
            v.invert_axis(Axis(2));
            v = v.permuted_axes([0, 2, 1]);
        }
        v.as_standard_layout().into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub scene: usize,
    pub top: usize,
    pub left: usize,
    pub transform: Dihedral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `[L_i, H_i]` for each exposure, `(6, s, s)`.
    pub inputs: [Array3<f64>; 3],
    pub gt: Array3<f64>,
    pub meta: PatchMeta,
}

/// Crops `size × size` at (`top`, `left`) and applies `transform` to all
/// three exposures and the ground truth.
pub fn crop_patch(
    stack: &ExposureStack,
    scene: usize,
    top: usize,
    left: usize,
    size: usize,
    transform: Dihedral,
) -> Result<Patch> {
    let (h, w) = stack.size();
    if top + size > h || left + size > w {
        return Err(Error::Config(format!(
            "patch {size}x{size} at ({top}, {left}) exceeds scene {h}x{w}"
        )));
    }
    let gt = stack.gt.as_ref().ok_or_else(|| {
        Error::Config(format!("scene `{}` has no ground truth to train on", stack.name))
    })?;
    let window = s![.., top..top + size, left..left + size];
    let inputs = stack
        .inputs()
        .map(|y| transform.apply(y.slice(window)));
    Ok(Patch {
        inputs,
        gt: transform.apply(gt.slice(window)),
        meta: PatchMeta {
            scene,
            top,
            left,
            transform,
        },
    })
}

/// Uniform crop offset plus a uniformly drawn dihedral transform.
pub fn sample_patch<R: Rng + ?Sized>(
    stack: &ExposureStack,
    scene: usize,
    size: usize,
    rng: &mut R,
) -> Result<Patch> {
    let (h, w) = stack.size();
    if size == 0 || h < size || w < size {
        return Err(Error::Config(format!(
            "scene `{}` ({h}x{w}) is smaller than the {size}x{size} patch",
            stack.name
        )));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let transform = Dihedral::all()[rng.random_range(0..8)];
    crop_patch(stack, scene, top, left, size, transform)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub y1: Array4<f64>,
    pub y2: Array4<f64>,
    pub y3: Array4<f64>,
    pub gt: Array4<f64>,
    pub size: usize,
    pub meta: Vec<PatchMeta>,
}

impl PatchBatch {
    pub fn from_patches(patches: Vec<Patch>) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::EmptyDataset("no patches to batch".into()))?;
        let size = first.gt.dim().1;
        let stack = |f: &dyn Fn(&Patch) -> ArrayView3<'_, f64>| -> Result<Array4<f64>> {
            let views: Vec<_> = patches.iter().map(f).collect();
            ndarray::stack(Axis(0), &views)
                .map_err(|e| Error::Config(format!("patches disagree in shape: {e}")))
        };
        Ok(Self {
            y1: stack(&|p| p.inputs[0].view())?,
            y2: stack(&|p| p.inputs[1].view())?,
            y3: stack(&|p| p.inputs[2].view())?,
            gt: stack(&|p| p.gt.view())?,
            size,
            meta: patches.iter().map(|p| p.meta).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// `(y1, y2, y3, gt)` as tensors of the given dtype.
    pub fn to_tensors(&self, device: &Device, dtype: DType) -> Result<[Tensor; 4]> {
        Ok([
            array4_to_tensor(&self.y1, device, dtype)?,
            array4_to_tensor(&self.y2, device, dtype)?,
            array4_to_tensor(&self.y3, device, dtype)?,
            array4_to_tensor(&self.gt, device, dtype)?,
        ])
    }
}

/// One patch per entry of `scenes` (indices into `stacks`).
pub fn sample_patches<R: Rng + ?Sized>(
    stacks: &[ExposureStack],
    scenes: &[usize],
    size: usize,
    rng: &mut R,
) -> Result<PatchBatch> {
    let patches = scenes
        .iter()
        .map(|&i| sample_patch(&stacks[i], i, size, rng))
        .collect::<Result<Vec<_>>>()?;
    PatchBatch::from_patches(patches)
}

pub fn array4_to_tensor(a: &Array4<f64>, device: &Device, dtype: DType) -> Result<Tensor> {
    let shape = a.shape().to_vec();
    let data: Vec<f64> = a.iter().copied().collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

pub fn array3_to_tensor(a: &Array3<f64>, device: &Device, dtype: DType) -> Result<Tensor> {
    array4_to_tensor(&a.view().insert_axis(Axis(0)).to_owned(), device, dtype)
}

/// Batch element `index` of a `(B, C, H, W)` tensor as an array.
pub fn tensor_to_array3(t: &Tensor, index: usize) -> Result<Array3<f64>> {
    let (_, c, h, w) = t.dims4()?;
    let data = t
        .get(index)?
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?;
    Ok(Array3::from_shape_vec((c, h, w), data).expect("shape from dims4"))
}
