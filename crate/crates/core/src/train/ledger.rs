//! Append-only JSON-lines run log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub step: u64,
    pub lr: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub step_losses: Vec<f64>,
    /// Aggregate over the selection scenes.
    pub metrics: Option<MetricRow>,
    pub wall_clock_s: f64,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunLedger {
    path: PathBuf,
}

impl RunLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &LedgerEntry) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let line = serde_json::to_string(entry).map_err(|e| Error::Parse {
            path: self.path.clone(),
            msg: e.to_string(),
        })?;
        writeln!(f, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    /// All entries, oldest first; empty when the file does not exist.
    pub fn read(&self) -> Result<Vec<LedgerEntry>> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: self.path.clone(),
                    msg: format!("line {}: {e}", i + 1),
                })
            })
            .collect()
    }
}
