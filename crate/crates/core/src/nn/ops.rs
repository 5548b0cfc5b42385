//! Fused CPU kernels with hand-written backward passes.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, DType, Layout, Shape, Tensor};

use crate::error::Result;
use crate::exec::{self, ExecMode};

trait Real: candle_core::WithDType + Copy + Send + Sync + 'static {
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn from(v: f64) -> Self;
    fn fmax(self, other: Self) -> Self;
    fn storage(v: Vec<Self>) -> CpuStorage;
}

impl Real for f32 {
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn from(v: f64) -> Self {
        v as f32
    }
    fn fmax(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn storage(v: Vec<Self>) -> CpuStorage {
        CpuStorage::F32(v)
    }
}

impl Real for f64 {
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn from(v: f64) -> Self {
        v
    }
    fn fmax(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn storage(v: Vec<Self>) -> CpuStorage {
        CpuStorage::F64(v)
    }
}

fn slice<'a, T: Real>(s: &'a CpuStorage, l: &Layout, what: &str) -> candle_core::Result<&'a [T]> {
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg(format!("{what}: operand must be contiguous")))?;
    Ok(&s.as_slice::<T>()?[a..b])
}

fn unsupported(op: &str, dt: DType) -> candle_core::Error {
    candle_core::Error::Msg(format!("{op}: unsupported dtype {dt:?}"))
}

fn contiguous(t: &Tensor) -> candle_core::Result<Tensor> {
    t.contiguous()
}

// ---------------------------------------------------------------------------
// softmax(scores + bias) over the last axis

struct BiasSoftmax;

/// `scores`: `(N, H, L, L)`, `bias`: `(H, L, L)`.
fn bias_softmax_fwd<T: Real>(scores: &[T], bias: &[T], row: usize) -> Vec<T> {
    let mut out = scores.to_vec();
    let plane = bias.len();
    exec::rows_mut(ExecMode::preferred(), &mut out, row, |r, dst| {
        let b = &bias[(r * row) % plane..][..row];
        let mut m = T::from(f64::NEG_INFINITY);
        for (d, &bv) in dst.iter_mut().zip(b) {
            *d += bv;
            m = m.fmax(*d);
        }
        let mut sum = T::from(0.0);
        for d in dst.iter_mut() {
            *d = (*d - m).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    });
    out
}

impl CustomOp2 for BiasSoftmax {
    fn name(&self) -> &'static str {
        "bias-softmax"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let row = *l1.dims().last().unwrap_or(&1);
        let out = match s1.dtype() {
            DType::F32 => f32::storage(bias_softmax_fwd(
                slice::<f32>(s1, l1, self.name())?,
                slice::<f32>(s2, l2, self.name())?,
                row,
            )),
            DType::F64 => f64::storage(bias_softmax_fwd(
                slice::<f64>(s1, l1, self.name())?,
                slice::<f64>(s2, l2, self.name())?,
                row,
            )),
            dt => return Err(unsupported(self.name(), dt)),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        _scores: &Tensor,
        bias: &Tensor,
        res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad_scores = res.apply_op2_no_bwd(&contiguous(grad_res)?, &SoftmaxGrad)?;
        let grad_bias = grad_scores.apply_op1_no_bwd(&SumLeading {
            plane: bias.elem_count(),
        })?;
        Ok((Some(grad_scores), Some(grad_bias.reshape(bias.shape())?)))
    }
}

/// `y ⊙ (g − ⟨g, y⟩)` per row.
struct SoftmaxGrad;

fn softmax_grad<T: Real>(y: &[T], g: &[T], row: usize) -> Vec<T> {
    let mut out = g.to_vec();
    exec::rows_mut(ExecMode::preferred(), &mut out, row, |r, dst| {
        let yr = &y[r * row..][..row];
        let mut dot = T::from(0.0);
        for (d, &yv) in dst.iter().zip(yr) {
            dot += *d * yv;
        }
        for (d, &yv) in dst.iter_mut().zip(yr) {
            *d = yv * (*d - dot);
        }
    });
    out
}

impl CustomOp2 for SoftmaxGrad {
    fn name(&self) -> &'static str {
        "softmax-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let row = *l1.dims().last().unwrap_or(&1);
        let out = match s1.dtype() {
            DType::F32 => f32::storage(softmax_grad(
                slice::<f32>(s1, l1, self.name())?,
                slice::<f32>(s2, l2, self.name())?,
                row,
            )),
            DType::F64 => f64::storage(softmax_grad(
                slice::<f64>(s1, l1, self.name())?,
                slice::<f64>(s2, l2, self.name())?,
                row,
            )),
            dt => return Err(unsupported(self.name(), dt)),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// Sums consecutive blocks of `plane` elements.
struct SumLeading {
    plane: usize,
}

fn sum_leading<T: Real>(x: &[T], plane: usize) -> Vec<T> {
    let mut out = vec![T::from(0.0); plane];
    for block in x.chunks_exact(plane) {
        for (o, &v) in out.iter_mut().zip(block) {
            *o += v;
        }
    }
    out
}

impl CustomOp1 for SumLeading {
    fn name(&self) -> &'static str {
        "sum-leading"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match s.dtype() {
            DType::F32 => f32::storage(sum_leading(slice::<f32>(s, l, self.name())?, self.plane)),
            DType::F64 => f64::storage(sum_leading(slice::<f64>(s, l, self.name())?, self.plane)),
            dt => return Err(unsupported(self.name(), dt)),
        };
        Ok((out, Shape::from(self.plane)))
    }
}

/// `softmax(scores + bias)` along the last axis, with `bias` broadcast over
/// the leading axis of `scores`.
pub fn bias_softmax(scores: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let sd = scores.dims();
    if sd.len() < 2 || &sd[1..] != bias.dims() {
        return Err(crate::error::Error::shape(
            "bias_softmax bias",
            &sd[1.min(sd.len())..],
            bias.dims(),
        ));
    }
    let bias = bias.to_dtype(scores.dtype())?;
    Ok(contiguous(scores)?.apply_op2(&contiguous(&bias)?, BiasSoftmax)?)
}

// ---------------------------------------------------------------------------
// layer normalisation over the last axis

struct LayerNormOp {
    eps: f64,
}

fn ln_fwd<T: Real>(x: &[T], w: &[T], b: &[T], eps: f64) -> Vec<T> {
    let c = w.len();
    let mut out = x.to_vec();
    let inv_c = T::from(1.0 / c as f64);
    exec::rows_mut(ExecMode::preferred(), &mut out, c, |_, row| {
        let mut mean = T::from(0.0);
        for &v in row.iter() {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = T::from(0.0);
        for &v in row.iter() {
            var += (v - mean) * (v - mean);
        }
        let rstd = T::from(1.0) / (var * inv_c + T::from(eps)).sqrt();
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * w[k] + b[k];
        }
    });
    out
}

/// Gradient with respect to the input, given the upstream gradient.
fn ln_bwd_x<T: Real>(x: &[T], w: &[T], g: &[T], eps: f64) -> Vec<T> {
    let c = w.len();
    let inv_c = T::from(1.0 / c as f64);
    let mut out = vec![T::from(0.0); x.len()];
    exec::rows_mut(ExecMode::preferred(), &mut out, c, |r, dst| {
        let xr = &x[r * c..][..c];
        let gr = &g[r * c..][..c];
        let mut mean = T::from(0.0);
        for &v in xr {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = T::from(0.0);
        for &v in xr {
            var += (v - mean) * (v - mean);
        }
        let rstd = T::from(1.0) / (var * inv_c + T::from(eps)).sqrt();
        let (mut m1, mut m2) = (T::from(0.0), T::from(0.0));
        for k in 0..c {
            let dxhat = gr[k] * w[k];
            m1 += dxhat;
            m2 += dxhat * (xr[k] - mean) * rstd;
        }
        m1 = m1 * inv_c;
        m2 = m2 * inv_c;
        for k in 0..c {
            let xhat = (xr[k] - mean) * rstd;
            dst[k] = rstd * (gr[k] * w[k] - m1 - xhat * m2);
        }
    });
    out
}

/// `(Σ g·x̂, Σ g)` over rows.
fn ln_bwd_wb<T: Real>(x: &[T], g: &[T], c: usize, eps: f64) -> Vec<T> {
    let inv_c = T::from(1.0 / c as f64);
    let mut out = vec![T::from(0.0); 2 * c];
    for (xr, gr) in x.chunks_exact(c).zip(g.chunks_exact(c)) {
        let mut mean = T::from(0.0);
        for &v in xr {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = T::from(0.0);
        for &v in xr {
            var += (v - mean) * (v - mean);
        }
        let rstd = T::from(1.0) / (var * inv_c + T::from(eps)).sqrt();
        for k in 0..c {
            out[k] += gr[k] * (xr[k] - mean) * rstd;
            out[c + k] += gr[k];
        }
    }
    out
}

impl CustomOp3 for LayerNormOp {
    fn name(&self) -> &'static str {
        "layer-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = self.name();
        let out = match s1.dtype() {
            DType::F32 => f32::storage(ln_fwd(
                slice::<f32>(s1, l1, n)?,
                slice::<f32>(s2, l2, n)?,
                slice::<f32>(s3, l3, n)?,
                self.eps,
            )),
            DType::F64 => f64::storage(ln_fwd(
                slice::<f64>(s1, l1, n)?,
                slice::<f64>(s2, l2, n)?,
                slice::<f64>(s3, l3, n)?,
                self.eps,
            )),
            dt => return Err(unsupported(n, dt)),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _b: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let g = contiguous(grad_res)?;
        let dx = x.apply_op3_no_bwd(w, &g, &LayerNormGradX { eps: self.eps })?;
        let dwb = x.apply_op2_no_bwd(&g, &LayerNormGradWB { eps: self.eps })?;
        let c = w.elem_count();
        Ok((Some(dx), Some(dwb.narrow(0, 0, c)?), Some(dwb.narrow(0, c, c)?)))
    }
}

struct LayerNormGradX {
    eps: f64,
}

impl CustomOp3 for LayerNormGradX {
    fn name(&self) -> &'static str {
        "layer-norm-grad-x"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = self.name();
        let out = match s1.dtype() {
            DType::F32 => f32::storage(ln_bwd_x(
                slice::<f32>(s1, l1, n)?,
                slice::<f32>(s2, l2, n)?,
                slice::<f32>(s3, l3, n)?,
                self.eps,
            )),
            DType::F64 => f64::storage(ln_bwd_x(
                slice::<f64>(s1, l1, n)?,
                slice::<f64>(s2, l2, n)?,
                slice::<f64>(s3, l3, n)?,
                self.eps,
            )),
            dt => return Err(unsupported(n, dt)),
        };
        Ok((out, l1.shape().clone()))
    }
}

struct LayerNormGradWB {
    eps: f64,
}

impl CustomOp2 for LayerNormGradWB {
    fn name(&self) -> &'static str {
        "layer-norm-grad-wb"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = self.name();
        let c = *l1.dims().last().unwrap_or(&1);
        let out = match s1.dtype() {
            DType::F32 => f32::storage(ln_bwd_wb(
                slice::<f32>(s1, l1, n)?,
                slice::<f32>(s2, l2, n)?,
                c,
                self.eps,
            )),
            DType::F64 => f64::storage(ln_bwd_wb(
                slice::<f64>(s1, l1, n)?,
                slice::<f64>(s2, l2, n)?,
                c,
                self.eps,
            )),
            dt => return Err(unsupported(n, dt)),
        };
        Ok((out, Shape::from(2 * c)))
    }
}

/// `(x − mean) / sqrt(var + eps) · w + b` over the last axis.
pub fn layer_norm(x: &Tensor, w: &Tensor, b: &Tensor, eps: f64) -> Result<Tensor> {
    let c = *x.dims().last().unwrap_or(&0);
    if w.dims() != [c] || b.dims() != [c] {
        return Err(crate::error::Error::shape("layer_norm affine", &[c], w.dims()));
    }
    Ok(contiguous(x)?.apply_op3(&contiguous(w)?, &contiguous(b)?, LayerNormOp { eps })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{self, GradCheckConfig};
    use candle_core::{Device, D};

    #[test]
    fn bias_softmax_matches_composed() {
        let dev = Device::Cpu;
        let s = gradcheck::random_var(&[3, 2, 4, 4], 1, &dev).unwrap();
        let b = gradcheck::random_var(&[2, 4, 4], 2, &dev).unwrap();
        let fused = bias_softmax(s.as_tensor(), b.as_tensor()).unwrap();
        let composed = candle_nn::ops::softmax(
            &s.as_tensor().broadcast_add(b.as_tensor()).unwrap(),
            D::Minus1,
        )
        .unwrap();
        let diff = (fused - composed).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f64>().unwrap() < 1e-15);
    }

    #[test]
    fn bias_softmax_gradient() {
        let dev = Device::Cpu;
        let s = gradcheck::random_var(&[3, 2, 4, 4], 3, &dev).unwrap();
        let b = gradcheck::random_var(&[2, 4, 4], 4, &dev).unwrap();
        let vars = vec![("s".to_string(), s.clone()), ("b".to_string(), b.clone())];
        let r = gradcheck::check(
            &vars,
            || gradcheck::random_projection(&bias_softmax(s.as_tensor(), b.as_tensor())?, 5),
            GradCheckConfig {
                samples_per_var: 96,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(r.passes(1e-7), "{r:?}");
    }

    #[test]
    fn layer_norm_gradient() {
        let dev = Device::Cpu;
        let x = gradcheck::random_var(&[5, 3, 6], 6, &dev).unwrap();
        let w = gradcheck::random_var(&[6], 7, &dev).unwrap();
        let b = gradcheck::random_var(&[6], 8, &dev).unwrap();
        let vars = vec![
            ("x".to_string(), x.clone()),
            ("w".to_string(), w.clone()),
            ("b".to_string(), b.clone()),
        ];
        let r = gradcheck::check(
            &vars,
            || {
                let y = layer_norm(x.as_tensor(), w.as_tensor(), b.as_tensor(), 1e-5)?;
                gradcheck::random_projection(&y, 9)
            },
            GradCheckConfig {
                samples_per_var: 90,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn f32_supported() {
        let s = Tensor::zeros((1, 1, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let b = Tensor::zeros((1, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let p = bias_softmax(&s, &b).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(p, vec![0.5; 4]);
    }
}
