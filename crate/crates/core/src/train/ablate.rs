//! Stage, component and paradigm sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{Datasets, RunConfig};
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Paradigm, Variant};
use crate::nn::BlockKind;

pub const STAGE_SWEEP: [usize; 5] = [2, 3, 4, 5, 6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Stages,
    Components,
    Paradigm,
}

impl FromStr for Sweep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stages" => Ok(Sweep::Stages),
            "components" => Ok(Sweep::Components),
            "paradigm" => Ok(Sweep::Paradigm),
            other => Err(Error::Config(format!(
                "unknown sweep `{other}` (stages, components or paradigm)"
            ))),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sweep::Stages => "stages",
            Sweep::Components => "components",
            Sweep::Paradigm => "paradigm",
        })
    }
}

impl Sweep {
    /// `(row label, model configuration)` for every variant, in table order.
    pub fn variants(self, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
        match self {
            Sweep::Stages => STAGE_SWEEP
                .iter()
                .map(|&t| (format!("T={t}"), base.with_stages(t)))
                .collect(),
            Sweep::Components => Variant::ALL
                .iter()
                .map(|&v| (v.label().to_string(), base.with_variant(v)))
                .collect(),
            Sweep::Paradigm => [Paradigm::AF, Paradigm::FA]
                .iter()
                .map(|&p| (p.to_string(), base.with_paradigm(p)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sweep: Sweep,
    pub variant: String,
    pub stages: usize,
    pub paradigm: Paradigm,
    pub use_sam: bool,
    pub use_cfm: bool,
    pub use_dcm: bool,
    pub params: usize,
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub psnr_mu: f64,
    pub psnr_l: f64,
    pub ssim_mu: f64,
    pub ssim_l: f64,
    pub sam_calls: usize,
    pub sfm_calls: usize,
    pub cfm_calls: usize,
    pub dcm_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Config(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serialises") + "\n")
            .collect()
    }

    /// Writes `ablation.csv` and `ablation.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv_path = dir.join("ablation.csv");
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let jl = dir.join("ablation.jsonl");
        std::fs::write(&jl, self.to_jsonl()).map_err(|e| Error::io(&jl, e))
    }
}

/// Trains every variant of `sweep` with the optimiser settings of `base`
/// and scores it on the selection scenes. Each variant gets its own
/// subdirectory of `out_dir`.
pub fn run_ablation(base: &RunConfig, sweep: Sweep, data: &Datasets, out_dir: &Path) -> Result<AblationReport> {
    base.validate()?;
    let mut report = AblationReport::default();
    for (label, model) in sweep.variants(&base.model) {
        log::info!("ablation {sweep}: {label}");
        let config = RunConfig {
            model,
            ..base.clone()
        };
        let dir = out_dir.join(label.replace('=', "-"));
        let mut trainer = Trainer::with_data(config, data.clone(), dir)?;
        let summaries = trainer.run()?;
        let metrics = trainer
            .evaluate_selection()?
            .ok_or_else(|| Error::EmptyDataset("no scenes with ground truth to score".into()))?;
        let counters = trainer.model().counters();
        report.rows.push(AblationRow {
            sweep,
            variant: label,
            stages: model.stages,
            paradigm: model.paradigm,
            use_sam: model.use_sam,
            use_cfm: model.use_cfm,
            use_dcm: model.use_dcm,
            params: trainer.model().params().num_params(),
            steps: trainer.steps(),
            final_loss: summaries.last().map(|s| s.mean_loss()),
            psnr_mu: metrics.psnr_mu,
            psnr_l: metrics.psnr_l,
            ssim_mu: metrics.ssim_mu,
            ssim_l: metrics.ssim_l,
            sam_calls: counters.get(BlockKind::Sam),
            sfm_calls: counters.get(BlockKind::Sfm),
            cfm_calls: counters.get(BlockKind::Cfm),
            dcm_calls: counters.get(BlockKind::Dcm),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_row_labels() {
        let base = ModelConfig::desk();
        let labels = |s: Sweep| s.variants(&base).into_iter().map(|(l, _)| l).collect::<Vec<_>>();
        assert_eq!(labels(Sweep::Stages), ["T=2", "T=3", "T=4", "T=5", "T=6"]);
        assert_eq!(labels(Sweep::Components), ["M1", "M2", "M3", "M4", "full"]);
        assert_eq!(labels(Sweep::Paradigm), ["AF", "FA"]);
    }

    #[test]
    fn unknown_sweep_rejected() {
        assert!("stage".parse::<Sweep>().is_err());
        assert_eq!("paradigm".parse::<Sweep>().unwrap(), Sweep::Paradigm);
    }
}
