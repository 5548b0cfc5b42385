//! Central finite-difference gradient checks.

use candle_core::{DType, Tensor, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates probed per variable; all of them when the variable is
    /// smaller.
    pub samples_per_var: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            samples_per_var: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarReport {
    pub name: String,
    pub probed: usize,
    /// `max|g_analytic − g_numeric| / max(max|g_analytic|, max|g_numeric|)`
    /// over the probed coordinates.
    pub rel_error: f64,
    pub max_grad: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub vars: Vec<VarReport>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.vars.iter().map(|v| v.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.vars.iter().all(|v| v.rel_error <= tol)
    }

    pub fn failures(&self, tol: f64) -> Vec<&VarReport> {
        self.vars.iter().filter(|v| v.rel_error > tol).collect()
    }
}

fn flat(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    let v = flat(t)?;
    if v.len() != 1 {
        return Err(Error::shape("gradcheck loss", &[1], &[v.len()]));
    }
    Ok(v[0])
}

/// Compares autodiff gradients of the scalar `loss()` with respect to each
/// variable against central differences. Every variable must be `f64`.
pub fn check<F>(vars: &[(String, Var)], loss: F, cfg: GradCheckConfig) -> Result<GradReport>
where
    F: Fn() -> Result<Tensor>,
{
    let out = loss()?;
    let grads = out.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradReport::default();
    for (name, var) in vars {
        if var.dtype() != DType::F64 {
            return Err(Error::Config(format!("gradcheck needs f64, `{name}` is {:?}", var.dtype())));
        }
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => flat(g)?,
            None => vec![0.0; var.elem_count()],
        };
        let base = var.as_tensor().copy()?;
        let base_flat = flat(&base)?;
        let n = base_flat.len();
        let picks: Vec<usize> = if n <= cfg.samples_per_var {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.samples_per_var).into_vec()
        };
        let mut max_diff = 0.0f64;
        let mut max_grad = 0.0f64;
        for &i in &picks {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = base_flat.clone();
                p[i] += delta;
                var.set(&Tensor::from_vec(p, base.shape(), base.device())?)?;
                scalar(&loss()?)
            };
            let numeric = (eval(cfg.step)? - eval(-cfg.step)?) / (2.0 * cfg.step);
            max_diff = max_diff.max((numeric - analytic[i]).abs());
            max_grad = max_grad.max(numeric.abs()).max(analytic[i].abs());
        }
        var.set(&base)?;
        let rel_error = if max_grad == 0.0 { 0.0 } else { max_diff / max_grad };
        report.vars.push(VarReport {
            name: name.clone(),
            probed: picks.len(),
            rel_error,
            max_grad,
        });
    }
    Ok(report)
}

/// `Σ out ⊙ R` for a fixed pseudo-random `R`; turns any output into a scalar
/// whose gradient exercises every element.
pub fn random_projection(out: &Tensor, seed: u64) -> Result<Tensor> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..out.elem_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = Tensor::from_vec(w, out.shape(), out.device())?.to_dtype(out.dtype())?;
    Ok((out * w)?.sum_all()?)
}

/// Seeded uniform `(-1, 1)` variable.
pub fn random_var(shape: &[usize], seed: u64, device: &candle_core::Device) -> Result<Var> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(Var::from_tensor(&Tensor::from_vec(data, shape, device)?)?)
}
