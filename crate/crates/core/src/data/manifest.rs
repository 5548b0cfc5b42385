use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scene::{load_scene, ExposureStack};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};

/// Plain-text list of scene directories, one per line. Blank lines and lines
/// starting with `#` are ignored; relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub scenes: Vec<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Self {
        let scenes = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let p = Path::new(l);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            })
            .collect();
        Self { scenes }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text, path.parent().unwrap_or(Path::new("."))))
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Splits off the trailing `round(n · fraction)` scenes for validation,
    /// always leaving at least one training scene.
    pub fn split_validation(&self, fraction: f64) -> (Manifest, Manifest) {
        let n = self.scenes.len();
        let held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
        let (train, val) = self.scenes.split_at(n - held);
        (
            Manifest {
                scenes: train.to_vec(),
            },
            Manifest {
                scenes: val.to_vec(),
            },
        )
    }

    /// Loads every scene; decoding fans out over the pool in parallel mode.
    pub fn load_scenes(&self, mode: ExecMode) -> Result<Vec<ExposureStack>> {
        exec::map_slice(mode, &self.scenes, |p| load_scene(p))
            .into_iter()
            .collect()
    }
}

/// Per-(seed, worker, epoch) random stream. Distinct triples give
/// independent ChaCha streams.
pub fn worker_rng(seed: u64, worker: u32, epoch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((worker as u64) << 32) | epoch as u64);
    rng
}

/// Scene visiting order for an epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut worker_rng(seed, u32::MAX, epoch));
    order
}
