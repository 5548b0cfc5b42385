use std::sync::Arc;

use candle_core::{Tensor, Var};

use super::feature::{BlockConfig, BlockKind, CallCounters, FeatureMap};
use super::layers::{softplus, PointwiseMlp};
use super::params::{Init, ParamBuilder};
use crate::error::Result;

/// `ln(e − 1)`, the softplus preimage of 1.
pub const RHO_INIT: f64 = 0.541_324_854_612_918_1;

/// Data consistency in feature space:
/// `f_xp = MLP_B⁻¹(MLP_D₂ᵀ(f_y2) + β₁·f_u + β₃·f_v)` with `β = softplus(ρ)`.
#[derive(Debug, Clone)]
pub struct Dcm {
    d2t: PointwiseMlp,
    binv: PointwiseMlp,
    rho1: Var,
    rho3: Var,
    counters: Arc<CallCounters>,
}

impl Dcm {
    pub fn new(b: &ParamBuilder, cfg: &BlockConfig, counters: &Arc<CallCounters>) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            d2t: PointwiseMlp::new(&b.pp("mlp_d2t"), c, 2 * c, c)?,
            binv: PointwiseMlp::new(&b.pp("mlp_binv"), c, 2 * c, c)?,
            rho1: b.var("rho1", 1, Init::Const(RHO_INIT))?,
            rho3: b.var("rho3", 1, Init::Const(RHO_INIT))?,
            counters: counters.clone(),
        })
    }

    /// Test hook: both MLPs become the identity.
    pub fn make_identity(&mut self) {
        self.d2t.make_identity();
        self.binv.make_identity();
    }

    /// Current `(β₁, β₃)` as one-element tensors.
    pub fn betas(&self) -> Result<(Tensor, Tensor)> {
        Ok((softplus(self.rho1.as_tensor())?, softplus(self.rho3.as_tensor())?))
    }

    pub fn forward(&self, f_u: &FeatureMap, f_y2: &FeatureMap, f_v: &FeatureMap) -> Result<FeatureMap> {
        let (b1, b3) = self.betas()?;
        self.forward_with_betas(f_u, f_y2, f_v, &b1, &b3)
    }

    /// Same as [`Dcm::forward`] with explicit one-element `β` tensors.
    pub fn forward_with_betas(
        &self,
        f_u: &FeatureMap,
        f_y2: &FeatureMap,
        f_v: &FeatureMap,
        beta1: &Tensor,
        beta3: &Tensor,
    ) -> Result<FeatureMap> {
        self.counters.record(BlockKind::Dcm);
        f_u.ensure_same(f_y2, "dcm inputs")?;
        f_v.ensure_same(f_y2, "dcm inputs")?;
        let sum = self.d2t.forward(f_y2.nhwc())?;
        let sum = (sum + f_u.nhwc().broadcast_mul(beta1)?)?;
        let sum = (sum + f_v.nhwc().broadcast_mul(beta3)?)?;
        FeatureMap::from_nhwc(self.binv.forward(&sum)?)
    }
}
