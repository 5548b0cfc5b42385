//! Versioned safetensors checkpoints.
//!
//! Tensors are stored as `param/<name>`, `adam/m/<name>` and `adam/v/<name>`.
//! The header metadata holds `format` (see [`FORMAT_TAG`]) and `meta`, a JSON
//! [`CheckpointMeta`] with the run configuration, epoch counter, optimiser
//! step and RNG state.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Afunet;

pub const FORMAT_TAG: &str = "afunet-ckpt/1";

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: RunConfig,
    /// Completed epochs; training resumes at this epoch.
    pub epoch: usize,
    pub step: u64,
    pub rng: RngState,
    pub best_psnr_mu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: HashMap<String, Tensor>,
    pub adam_step: u64,
    pub adam: HashMap<String, Tensor>,
}

fn ckpt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn save(path: &Path, model: &Afunet, adam: Option<&Adam>, meta: &CheckpointMeta) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(k, v)| (format!("param/{k}"), v.as_tensor().clone()))
        .collect();
    let mut adam_step = 0;
    if let Some(a) = adam {
        adam_step = a.steps();
        tensors.extend(a.state_tensors().into_iter().map(|(k, t)| (format!("adam/{k}"), t)));
    }
    let mut info = HashMap::new();
    info.insert("format".to_string(), FORMAT_TAG.to_string());
    info.insert(
        "meta".to_string(),
        serde_json::to_string(meta).map_err(|e| ckpt_err(path, e.to_string()))?,
    );
    info.insert("adam_step".to_string(), adam_step.to_string());
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    safetensors::serialize_to_file(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(info), &tmp)
        .map_err(|e| ckpt_err(path, e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| ckpt_err(path, format!("not a safetensors file: {e}")))?;
    let info = header
        .metadata()
        .as_ref()
        .ok_or_else(|| ckpt_err(path, "missing metadata"))?;
    match info.get("format") {
        Some(tag) if tag == FORMAT_TAG => {}
        Some(tag) => return Err(ckpt_err(path, format!("unsupported format `{tag}`, expected `{FORMAT_TAG}`"))),
        None => return Err(ckpt_err(path, "missing format tag")),
    }
    let meta: CheckpointMeta = serde_json::from_str(
        info.get("meta").ok_or_else(|| ckpt_err(path, "missing `meta`"))?,
    )
    .map_err(|e| ckpt_err(path, format!("bad `meta`: {e}")))?;
    let adam_step = info
        .get("adam_step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ckpt_err(path, "missing `adam_step`"))?;
    let all = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)
        .map_err(|e| ckpt_err(path, e.to_string()))?;
    let mut params = HashMap::new();
    let mut adam = HashMap::new();
    for (k, t) in all {
        if let Some(name) = k.strip_prefix("param/") {
            params.insert(name.to_string(), t);
        } else if let Some(name) = k.strip_prefix("adam/") {
            adam.insert(name.to_string(), t);
        } else {
            return Err(ckpt_err(path, format!("unexpected tensor `{k}`")));
        }
    }
    Ok(Checkpoint {
        meta,
        params,
        adam_step,
        adam,
    })
}

impl Checkpoint {
    /// Rebuilds the model described by the stored configuration and loads its
    /// weights.
    pub fn model(&self, dtype: DType, device: &Device) -> Result<Afunet> {
        let model = Afunet::new(self.meta.config.model, self.meta.config.seed, dtype, device)?;
        model.params().load(&self.params)?;
        Ok(model)
    }
}
