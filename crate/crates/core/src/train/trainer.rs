use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::{self, CheckpointMeta, RngState};
use super::config::{Datasets, RunConfig};
use super::infer::evaluate;
use super::ledger::{LedgerEntry, RunLedger};
use super::schedule::CosineSchedule;
use crate::data::{crop_patch, epoch_order, worker_rng, Dihedral, ExposureStack, PatchBatch};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::metrics::{reconstruction_loss, MetricRow, Vgg19Features};
use crate::model::Afunet;

pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LEDGER_FILE: &str = "ledger.jsonl";

/// Summary of one finished epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub step_losses: Vec<f64>,
    pub metrics: Option<MetricRow>,
    pub improved: bool,
}

impl EpochSummary {
    pub fn mean_loss(&self) -> f64 {
        self.step_losses.iter().sum::<f64>() / self.step_losses.len().max(1) as f64
    }
}

/// Owns the model, optimiser, data and random stream of one training run.
pub struct Trainer {
    config: RunConfig,
    run_dir: PathBuf,
    model: Afunet,
    adam: Adam,
    schedule: CosineSchedule,
    data: Datasets,
    vgg: Option<Vgg19Features>,
    rng: ChaCha8Rng,
    epoch: usize,
    best_psnr_mu: Option<f64>,
    wall_clock_s: f64,
    ledger: RunLedger,
}

fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn check_patch_fits(scenes: &[ExposureStack], patch: usize) -> Result<()> {
    for s in scenes {
        let (h, w) = s.size();
        if h < patch || w < patch {
            return Err(Error::Config(format!(
                "scene `{}` ({h}x{w}) is smaller than the {patch}x{patch} patch",
                s.name
            )));
        }
    }
    Ok(())
}

impl Trainer {
    /// Loads the configured data and starts from freshly initialised weights.
    pub fn new(config: RunConfig, run_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let data = config.data.load(ExecMode::preferred())?;
        Self::with_data(config, data, run_dir)
    }

    pub fn with_data(config: RunConfig, data: Datasets, run_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::EmptyDataset("training split is empty".into()));
        }
        check_patch_fits(&data.train, config.optim.patch)?;
        let run_dir = run_dir.into();
        ensure_writable(&run_dir)?;
        let model = Afunet::new(config.model, config.seed, DType::F32, &Device::Cpu)?;
        let adam = Adam::new(model.params(), config.optim.adam)?;
        let vgg = match (config.loss.perceptual_enabled, &config.loss.vgg_weights) {
            (true, Some(p)) => Some(Vgg19Features::load(
                p,
                &config.loss.perceptual_layers,
                DType::F32,
                &Device::Cpu,
            )?),
            (true, None) => {
                return Err(Error::Config(
                    "perceptual loss enabled but `loss.vgg_weights` is unset".into(),
                ))
            }
            (false, _) => None,
        };
        Ok(Self {
            schedule: config.optim.schedule()?,
            rng: worker_rng(config.data.seed, 0, 0),
            ledger: RunLedger::new(run_dir.join(LEDGER_FILE)),
            config,
            run_dir,
            model,
            adam,
            data,
            vgg,
            epoch: 0,
            best_psnr_mu: None,
            wall_clock_s: 0.0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::run_epoch`]. The
    /// stored configuration wins over the caller's except for data and
    /// output location.
    pub fn resume(checkpoint: &Path, data: Datasets, run_dir: impl Into<PathBuf>) -> Result<Self> {
        let ckpt = checkpoint::load(checkpoint)?;
        let mut t = Self::with_data(ckpt.meta.config.clone(), data, run_dir)?;
        t.model.params().load(&ckpt.params)?;
        if ckpt.adam_step > 0 || !ckpt.adam.is_empty() {
            t.adam.load_state(ckpt.adam_step, &ckpt.adam)?;
        }
        t.rng = ckpt.meta.rng.restore()?;
        t.epoch = ckpt.meta.epoch;
        t.best_psnr_mu = ckpt.meta.best_psnr_mu;
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &Afunet {
        &self.model
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn ledger(&self) -> &RunLedger {
        &self.ledger
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    pub fn best_psnr_mu(&self) -> Option<f64> {
        self.best_psnr_mu
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.config
            .optim
            .steps_per_epoch
            .unwrap_or_else(|| self.data.train.len().div_ceil(self.config.optim.batch))
    }

    /// Scenes used for best-checkpoint selection: the validation split, or
    /// the training scenes when it is empty.
    pub fn selection_scenes(&self) -> &[ExposureStack] {
        if self.data.validation.is_empty() {
            &self.data.train
        } else {
            &self.data.validation
        }
    }

    fn draw_batch(&self, rng: &mut ChaCha8Rng, step_in_epoch: usize) -> Result<PatchBatch> {
        let n = self.data.train.len();
        let order = epoch_order(n, self.config.data.seed, self.epoch as u32);
        let batch = self.config.optim.batch;
        let size = self.config.optim.patch;
        let patches = (0..batch)
            .map(|b| {
                let scene = order[(step_in_epoch * batch + b) % n];
                let stack = &self.data.train[scene];
                let (h, w) = stack.size();
                let top = rng.random_range(0..=h - size);
                let left = rng.random_range(0..=w - size);
                let transform = if self.config.optim.augment {
                    Dihedral::all()[rng.random_range(0..8)]
                } else {
                    Dihedral::IDENTITY
                };
                crop_patch(stack, scene, top, left, size, transform)
            })
            .collect::<Result<Vec<_>>>()?;
        PatchBatch::from_patches(patches)
    }

    fn train_step(&mut self, step_in_epoch: usize, lr: f64) -> Result<f64> {
        let mut rng = self.rng.clone();
        let batch = self.draw_batch(&mut rng, step_in_epoch)?;
        self.rng = rng;
        let [y1, y2, y3, gt] = batch.to_tensors(self.model.device(), self.model.dtype())?;
        let pred = self.model.forward(&y1, &y2, &y3)?;
        let loss = reconstruction_loss(&pred, &gt, &self.config.loss, &self.config.tonemap, self.vgg.as_ref())?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::Config(format!(
                "non-finite loss at step {}",
                self.adam.steps() + 1
            )));
        }
        let grads = loss.backward()?;
        self.adam.step(self.model.params(), &grads, lr)?;
        Ok(value)
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.adam.steps(),
            rng: RngState::capture(&self.rng),
            best_psnr_mu: self.best_psnr_mu,
        }
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.run_dir.join(LAST_CHECKPOINT)
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.run_dir.join(BEST_CHECKPOINT)
    }

    /// Scores the current weights on the selection scenes.
    pub fn evaluate_selection(&self) -> Result<Option<MetricRow>> {
        let report = evaluate(
            &self.model,
            self.selection_scenes(),
            &self.config.tonemap,
            ExecMode::preferred(),
        )?;
        Ok(report.aggregate())
    }

    /// Trains one epoch, scores the selection scenes, writes checkpoints and
    /// appends a ledger entry.
    pub fn run_epoch(&mut self) -> Result<EpochSummary> {
        let started = Instant::now();
        let lr = self.schedule.lr(self.epoch);
        let steps = self.steps_per_epoch();
        let mut step_losses = Vec::with_capacity(steps);
        for k in 0..steps {
            let l = self.train_step(k, lr)?;
            log::debug!("epoch {} step {}: loss {l:.6}", self.epoch, self.adam.steps());
            step_losses.push(l);
        }
        let metrics = self.evaluate_selection()?;
        self.epoch += 1;
        let psnr = metrics.as_ref().map(|m| m.psnr_mu);
        let improved = match (psnr, self.best_psnr_mu) {
            (Some(p), Some(best)) => p > best,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            self.best_psnr_mu = psnr;
        }
        let meta = self.meta();
        checkpoint::save(&self.last_checkpoint(), &self.model, Some(&self.adam), &meta)?;
        if improved {
            checkpoint::save(&self.best_checkpoint(), &self.model, Some(&self.adam), &meta)?;
        }
        self.wall_clock_s += started.elapsed().as_secs_f64();
        let summary = EpochSummary {
            epoch: self.epoch - 1,
            lr,
            step_losses,
            metrics,
            improved,
        };
        self.ledger.append(&LedgerEntry {
            epoch: summary.epoch,
            step: self.adam.steps(),
            lr,
            loss: summary.mean_loss(),
            step_losses: summary.step_losses.clone(),
            metrics: summary.metrics.clone(),
            wall_clock_s: self.wall_clock_s,
            last_checkpoint: self.last_checkpoint(),
            best_checkpoint: self.best_checkpoint().exists().then(|| self.best_checkpoint()),
        })?;
        log::info!(
            "epoch {} lr {:.3e} loss {:.6} psnr-mu {}",
            summary.epoch,
            lr,
            summary.mean_loss(),
            psnr.map_or("n/a".to_string(), |p| format!("{p:.2}"))
        );
        Ok(summary)
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self) -> Result<Vec<EpochSummary>> {
        let mut out = Vec::new();
        while self.epoch < self.config.optim.epochs {
            out.push(self.run_epoch()?);
        }
        Ok(out)
    }

    /// Loss on the first batch of the next epoch, without updating anything.
    pub fn peek_next_loss(&self) -> Result<f64> {
        let batch = self.draw_batch(&mut self.rng.clone(), 0)?;
        let [y1, y2, y3, gt] = batch.to_tensors(self.model.device(), self.model.dtype())?;
        let pred = self.model.forward(&y1, &y2, &y3)?;
        let loss = reconstruction_loss(&pred, &gt, &self.config.loss, &self.config.tonemap, self.vgg.as_ref())?;
        Ok(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}
