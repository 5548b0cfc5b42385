use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quality::{psnr, ssim_with, Domain};
use super::tonemap::TonemapParams;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::Image;

pub const AGGREGATE_LABEL: &str = "mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scene: String,
    pub psnr_mu: f64,
    pub psnr_l: f64,
    pub ssim_mu: f64,
    pub ssim_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScene {
    pub scene: String,
    pub reason: String,
}

/// Per-scene metrics plus the scenes that could not be scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub skipped: Vec<SkippedScene>,
}

pub fn evaluate_pair(scene: &str, pred: &Image, gt: &Image, tm: &TonemapParams) -> Result<MetricRow> {
    evaluate_pair_with(scene, pred, gt, tm, ExecMode::Sequential)
}

fn evaluate_pair_with(
    scene: &str,
    pred: &Image,
    gt: &Image,
    tm: &TonemapParams,
    mode: ExecMode,
) -> Result<MetricRow> {
    Ok(MetricRow {
        scene: scene.to_string(),
        psnr_mu: psnr(pred, gt, Domain::Mu, tm)?,
        psnr_l: psnr(pred, gt, Domain::Linear, tm)?,
        ssim_mu: ssim_with(pred, gt, Domain::Mu, tm, mode)?,
        ssim_l: ssim_with(pred, gt, Domain::Linear, tm, mode)?,
    })
}

/// Scores `(name, prediction, ground truth)` triples, one scene per task in
/// parallel mode. Rows keep input order.
pub fn evaluate_pairs(
    pairs: &[(String, Image, Image)],
    tm: &TonemapParams,
    mode: ExecMode,
) -> Result<Vec<MetricRow>> {
    exec::map_slice(mode, pairs, |(name, pred, gt)| {
        evaluate_pair_with(name, pred, gt, tm, ExecMode::Sequential)
    })
    .into_iter()
    .collect()
}

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn skip(&mut self, scene: impl Into<String>, reason: impl Into<String>) {
        let (scene, reason) = (scene.into(), reason.into());
        log::warn!("skipping scene `{scene}`: {reason}");
        self.skipped.push(SkippedScene { scene, reason });
    }

    /// Arithmetic mean of every column; `None` without rows.
    pub fn aggregate(&self) -> Option<MetricRow> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let mean = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        Some(MetricRow {
            scene: AGGREGATE_LABEL.to_string(),
            psnr_mu: mean(|r| r.psnr_mu),
            psnr_l: mean(|r| r.psnr_l),
            ssim_mu: mean(|r| r.ssim_mu),
            ssim_l: mean(|r| r.ssim_l),
        })
    }

    /// Scene rows followed by the aggregate row.
    pub fn table(&self) -> Vec<MetricRow> {
        self.rows.iter().cloned().chain(self.aggregate()).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.table() {
            w.serialize(row)
                .map_err(|e| Error::Config(format!("csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One JSON object per line: scene rows, the aggregate (`"aggregate":
    /// true`) and any skipped scenes (`"skipped": reason`).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("row serialises"));
            out.push('\n');
        }
        if let Some(agg) = self.aggregate() {
            let mut v = serde_json::to_value(agg).expect("row serialises");
            v["aggregate"] = serde_json::Value::Bool(true);
            out.push_str(&v.to_string());
            out.push('\n');
        }
        for s in &self.skipped {
            let v = serde_json::json!({ "scene": s.scene, "skipped": s.reason });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    /// Writes `metrics.csv` and `metrics.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv_path = dir.join("metrics.csv");
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let jl = dir.join("metrics.jsonl");
        std::fs::write(&jl, self.to_jsonl()).map_err(|e| Error::io(&jl, e))
    }
}
