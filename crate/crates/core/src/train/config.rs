use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::schedule::CosineSchedule;
use crate::data::{generate_synthetic, smooth_latent, ExposureStack, LatentStyle, Manifest, SyntheticScene};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::metrics::{LossConfig, TonemapParams};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub schedule: ScheduleKind,
    pub batch: usize,
    pub epochs: usize,
    pub patch: usize,
    /// Optimiser steps per epoch; one pass over the training scenes when
    /// unset.
    pub steps_per_epoch: Option<usize>,
    pub adam: AdamConfig,
    /// Random dihedral transform per patch.
    pub augment: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_init: 5e-4,
            lr_final: 5e-6,
            schedule: ScheduleKind::Cosine,
            batch: 6,
            epochs: 400,
            patch: 128,
            steps_per_epoch: None,
            adam: AdamConfig::default(),
            augment: true,
        }
    }
}

impl OptimConfig {
    pub fn schedule(&self) -> Result<CosineSchedule> {
        CosineSchedule::new(self.lr_init, self.lr_final, self.epochs)
    }
}

/// Generated training scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub scenes: usize,
    pub size: usize,
    /// Largest absolute translation, in pixels, of the non-reference
    /// exposures.
    pub max_offset: usize,
    pub noise_sigma: f64,
    pub latent: LatentStyle,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            scenes: 2,
            size: 64,
            max_offset: 0,
            noise_sigma: 0.0,
            latent: LatentStyle::default(),
        }
    }
}

impl SyntheticData {
    pub fn generate(&self, seed: u64) -> Result<Vec<ExposureStack>> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.max_offset as i64;
        (0..self.scenes)
            .map(|i| {
                let latent = smooth_latent(self.size, self.size, &self.latent, &mut rng);
                let mut scene = SyntheticScene::new(latent);
                scene.noise_sigma = self.noise_sigma;
                if m > 0 {
                    for o in &mut scene.offsets {
                        *o = (rng.random_range(-m..=m) as isize, rng.random_range(-m..=m) as isize);
                    }
                }
                generate_synthetic(format!("synthetic_{i:03}"), &scene, &mut rng)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Used when no training manifest is given.
    pub synthetic: Option<SyntheticData>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_manifest: None,
            test_manifest: None,
            validation_fraction: 0.1,
            seed: 0,
            synthetic: None,
        }
    }
}

/// Training and validation scenes.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Vec<ExposureStack>,
    pub validation: Vec<ExposureStack>,
}

impl DataConfig {
    pub fn load(&self, mode: ExecMode) -> Result<Datasets> {
        let (train, validation) = match (&self.train_manifest, &self.synthetic) {
            (Some(path), _) => {
                let manifest = Manifest::load(path)?;
                if manifest.is_empty() {
                    return Err(Error::EmptyDataset(format!("{} lists no scenes", path.display())));
                }
                let (t, v) = manifest.split_validation(self.validation_fraction);
                (t.load_scenes(mode)?, v.load_scenes(mode)?)
            }
            (None, Some(syn)) => {
                let all = syn.generate(self.seed)?;
                let n = all.len();
                let held = ((n as f64 * self.validation_fraction).round() as usize).min(n.saturating_sub(1));
                let mut train = all;
                let validation = train.split_off(n - held);
                (train, validation)
            }
            (None, None) => {
                return Err(Error::EmptyDataset(
                    "no training manifest and no synthetic data configured".into(),
                ))
            }
        };
        if let Some(bad) = train.iter().chain(&validation).find(|s| s.is_eval_only()) {
            return Err(Error::Missing {
                path: PathBuf::from(&bad.name),
                what: "ground truth for a training scene".into(),
            });
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset("training split is empty".into()));
        }
        Ok(Datasets { train, validation })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (desk or paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub loss: LossConfig,
    pub tonemap: TonemapParams,
    pub output_dir: PathBuf,
    /// Model initialisation seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            loss: LossConfig::default(),
            tonemap: TonemapParams::default(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::default(),
            Profile::Desk => Self {
                model: ModelConfig::desk(),
                optim: OptimConfig {
                    batch: 2,
                    patch: 64,
                    ..OptimConfig::default()
                },
                data: DataConfig {
                    synthetic: Some(SyntheticData::default()),
                    ..DataConfig::default()
                },
                ..Self::default()
            },
        }
    }

    /// `text` overlaid key by key on `base`; unknown keys are errors.
    pub fn overlay(base: &RunConfig, text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            msg,
        };
        let overlay: toml::Value = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let mut merged = toml::Value::try_from(base).map_err(|e| parse_err(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.schedule()?;
        self.loss.validate()?;
        if self.optim.batch == 0 || self.optim.patch == 0 {
            return Err(Error::Config("batch and patch must be positive".into()));
        }
        if self.optim.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.data.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_values() {
        let c = RunConfig::profile(Profile::Desk);
        assert_eq!((c.model.channels, c.model.stages), (16, 2));
        assert_eq!((c.optim.patch, c.optim.batch), (64, 2));
        assert!(c.data.synthetic.is_some());
        c.validate().unwrap();
    }

    #[test]
    fn paper_profile_values() {
        let c = RunConfig::profile(Profile::Paper);
        assert_eq!(c.optim.lr_init, 5e-4);
        assert_eq!(c.optim.lr_final, 5e-6);
        assert_eq!((c.optim.batch, c.optim.epochs, c.optim.patch), (6, 400, 128));
        assert_eq!(c.model.stages, 4);
        assert_eq!(c.loss.eta, 0.005);
    }

    #[test]
    fn overlay_keeps_base() {
        let base = RunConfig::profile(Profile::Desk);
        let c = RunConfig::overlay(&base, "[optim]\nepochs = 7\n", Path::new("x.toml")).unwrap();
        assert_eq!(c.optim.epochs, 7);
        assert_eq!(c.model.channels, 16);
    }

    #[test]
    fn overlay_rejects_unknown_and_invalid() {
        let base = RunConfig::default();
        let e = RunConfig::overlay(&base, "[optim]\nepoch = 7\n", Path::new("x.toml")).unwrap_err();
        assert!(e.to_string().contains("epoch"), "{e}");
        assert!(RunConfig::overlay(&base, "[optim]\nlr_final = 1.0\n", Path::new("x.toml")).is_err());
        assert!(RunConfig::overlay(&base, "[tonemap]\nmu = -2.0\n", Path::new("x.toml")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::profile(Profile::Desk);
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
