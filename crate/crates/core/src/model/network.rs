use std::sync::Arc;

use candle_core::{DType, Device, Tensor};

use super::config::{ModelConfig, Paradigm};
use crate::error::{Error, Result};
use crate::nn::{
    CallCounters, Cfm, Dcm, FeatureMap, ParamBuilder, ParamStore, ReconHead, ResidualFuse, Sam,
    Sfem, Sfm, INPUT_CHANNELS,
};

/// Feature triple carried between stages.
#[derive(Debug, Clone)]
pub struct StageState {
    pub f_a1: FeatureMap,
    pub f_x: FeatureMap,
    pub f_a3: FeatureMap,
}

impl StageState {
    pub fn validate(&self) -> Result<()> {
        self.f_a1.ensure_same(&self.f_x, "stage state")?;
        self.f_a3.ensure_same(&self.f_x, "stage state")
    }
}

/// One alignment-fusion stage. Disabled components are not constructed.
#[derive(Debug, Clone)]
pub struct AfmStage {
    pub sam1: Option<Sam>,
    pub sam3: Option<Sam>,
    pub sfm: Sfm,
    pub cfm_u: Option<Cfm>,
    pub cfm_v: Option<Cfm>,
    pub dcm: Option<Dcm>,
    pub fuse: ResidualFuse,
    paradigm: Paradigm,
}

impl AfmStage {
    pub fn new(b: &ParamBuilder, cfg: &ModelConfig, counters: &Arc<CallCounters>) -> Result<Self> {
        let bc = cfg.block();
        let sam = |name: &str| -> Result<Option<Sam>> {
            cfg.use_sam.then(|| Sam::new(&b.pp(name), &bc, counters)).transpose()
        };
        let cfm = |name: &str| -> Result<Option<Cfm>> {
            cfg.use_cfm.then(|| Cfm::new(&b.pp(name), &bc, counters)).transpose()
        };
        Ok(Self {
            sam1: sam("sam1")?,
            sam3: sam("sam3")?,
            sfm: Sfm::new(&b.pp("sfm"), &bc, counters)?,
            cfm_u: cfm("cfm_u")?,
            cfm_v: cfm("cfm_v")?,
            dcm: cfg
                .use_dcm
                .then(|| Dcm::new(&b.pp("dcm"), &bc, counters))
                .transpose()?,
            fuse: ResidualFuse::new(&b.pp("fuse"), &bc)?,
            paradigm: cfg.paradigm,
        })
    }

    fn align(sam: &Option<Sam>, f_a: &FeatureMap, f_x: &FeatureMap) -> Result<FeatureMap> {
        match sam {
            Some(s) => s.forward(f_a, f_x),
            None => Ok(f_a.clone()),
        }
    }

    /// SFM → CFMs → DCM → residual fuse; returns the new `f_x`.
    fn fuse_chain(
        &self,
        f_a1: &FeatureMap,
        f_x: &FeatureMap,
        f_a3: &FeatureMap,
        f_y2: &FeatureMap,
    ) -> Result<FeatureMap> {
        let (f_us, f_r, f_vs) = self.sfm.forward(f_a1, f_x, f_a3)?;
        let f_u = match &self.cfm_u {
            Some(c) => c.forward(&f_us, f_x)?,
            None => f_us,
        };
        let f_v = match &self.cfm_v {
            Some(c) => c.forward(&f_vs, f_x)?,
            None => f_vs,
        };
        let f_xp = match &self.dcm {
            Some(d) => d.forward(&f_u, f_y2, &f_v)?,
            None => f_x.clone(),
        };
        self.fuse.forward(&f_u, &f_xp, &f_v, &f_r)
    }

    pub fn forward(&self, state: &StageState, f_y2: &FeatureMap) -> Result<StageState> {
        state.validate()?;
        match self.paradigm {
            Paradigm::AF => {
                let f_a1 = Self::align(&self.sam1, &state.f_a1, &state.f_x)?;
                let f_a3 = Self::align(&self.sam3, &state.f_a3, &state.f_x)?;
                let f_x = self.fuse_chain(&f_a1, &state.f_x, &f_a3, f_y2)?;
                Ok(StageState { f_a1, f_x, f_a3 })
            }
            Paradigm::FA => {
                let f_x = self.fuse_chain(&state.f_a1, &state.f_x, &state.f_a3, f_y2)?;
                let f_a1 = Self::align(&self.sam1, &state.f_a1, &f_x)?;
                let f_a3 = Self::align(&self.sam3, &state.f_a3, &f_x)?;
                Ok(StageState { f_a1, f_x, f_a3 })
            }
        }
    }
}

/// Reflect indices `0..n + pad` over `0..n` without repeating the edge.
fn reflect_indices(n: usize, pad: usize) -> Vec<u32> {
    if n == 1 {
        return vec![0; n + pad];
    }
    let period = 2 * (n - 1);
    (0..n + pad)
        .map(|i| {
            let m = i % period;
            (if m < n { m } else { period - m }) as u32
        })
        .collect()
}

/// Reflect-pads the bottom and right of a `(B, C, H, W)` tensor so both
/// spatial sizes are multiples of `multiple`.
pub fn pad_to_multiple(x: &Tensor, multiple: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let ph = (multiple - h % multiple) % multiple;
    let pw = (multiple - w % multiple) % multiple;
    let mut t = x.clone();
    if ph > 0 {
        let idx = Tensor::from_vec(reflect_indices(h, ph), h + ph, x.device())?;
        t = t.index_select(&idx, 2)?;
    }
    if pw > 0 {
        let idx = Tensor::from_vec(reflect_indices(w, pw), w + pw, x.device())?;
        t = t.index_select(&idx, 3)?;
    }
    Ok(t)
}

/// The full unfolding network.
#[derive(Debug, Clone)]
pub struct Afunet {
    config: ModelConfig,
    sfem: [Sfem; 3],
    stages: Vec<AfmStage>,
    head: ReconHead,
    params: ParamStore,
    counters: Arc<CallCounters>,
    dtype: DType,
    device: Device,
}

impl Afunet {
    /// Builds a model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let b = ParamBuilder::new(seed, dtype, device);
        let counters = Arc::new(CallCounters::default());
        let c = config.channels;
        let sfem = [
            Sfem::new(&b.pp("sfem1"), c)?,
            Sfem::new(&b.pp("sfem2"), c)?,
            Sfem::new(&b.pp("sfem3"), c)?,
        ];
        let stages = (0..config.stages)
            .map(|t| AfmStage::new(&b.pp(format!("stage{t}")), &config, &counters))
            .collect::<Result<Vec<_>>>()?;
        let head = ReconHead::new(&b.pp("head"), c)?;
        Ok(Self {
            config,
            sfem,
            stages,
            head,
            params: b.store(),
            counters,
            dtype,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn counters(&self) -> &Arc<CallCounters> {
        &self.counters
    }

    pub fn stages(&self) -> &[AfmStage] {
        &self.stages
    }

    pub fn sfem(&self) -> &[Sfem; 3] {
        &self.sfem
    }

    pub fn head(&self) -> &ReconHead {
        &self.head
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Parameter count of stage `t`.
    pub fn stage_param_count(&self, t: usize) -> usize {
        self.params.count_with_prefix(&format!("stage{t}."))
    }

    /// Parameters outside the stage stack.
    pub fn shared_param_count(&self) -> usize {
        self.params.num_params() - (0..self.stages.len()).map(|t| self.stage_param_count(t)).sum::<usize>()
    }

    fn check_inputs(&self, ys: [&Tensor; 3]) -> Result<(usize, usize)> {
        let d0 = ys[0].dims().to_vec();
        for y in ys {
            let d = y.dims();
            if d.len() != 4 || d[1] != INPUT_CHANNELS {
                return Err(Error::shape("model input (B, 6, H, W)", &[INPUT_CHANNELS], d));
            }
            if d != d0.as_slice() {
                return Err(Error::shape("model inputs", &d0, d));
            }
        }
        Ok((d0[2], d0[3]))
    }

    /// `(StageState⁰, f_y2)`.
    pub fn initialize(&self, y1: &Tensor, y2: &Tensor, y3: &Tensor) -> Result<(StageState, FeatureMap)> {
        self.check_inputs([y1, y2, y3])?;
        let f_a1 = self.sfem[0].forward(y1)?;
        let f_x = self.sfem[1].forward(y2)?;
        let f_a3 = self.sfem[2].forward(y3)?;
        let f_y2 = f_x.clone();
        Ok((StageState { f_a1, f_x, f_a3 }, f_y2))
    }

    pub fn afm_stage(&self, state: &StageState, f_y2: &FeatureMap, t: usize) -> Result<StageState> {
        let stage = self
            .stages
            .get(t)
            .ok_or_else(|| Error::Config(format!("stage {t} out of range (T = {})", self.stages.len())))?;
        stage.forward(state, f_y2)
    }

    /// `(B, 6, H, W)` inputs → `(B, 3, H, W)` reconstruction in `(0, 1)`.
    pub fn forward(&self, y1: &Tensor, y2: &Tensor, y3: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_inputs([y1, y2, y3])?;
        let ws = self.config.window_size;
        let pad = |y: &Tensor| pad_to_multiple(&y.to_dtype(self.dtype)?, ws);
        let (mut state, f_y2) = self.initialize(&pad(y1)?, &pad(y2)?, &pad(y3)?)?;
        for t in 0..self.stages.len() {
            state = self.afm_stage(&state, &f_y2, t)?;
        }
        let out = self.head.forward(&state.f_x, &f_y2)?;
        Ok(out.narrow(2, 0, h)?.narrow(3, 0, w)?)
    }
}
