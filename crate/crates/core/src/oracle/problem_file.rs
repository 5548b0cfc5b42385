//! TOML problem descriptions for the `oracle` command.
//!
//! ```toml
//! [solver]            # optional, any SolverConfig field
//! max_iters = 200
//! order = "AF"
//!
//! [weights]           # optional
//! lambda1 = 1.0
//! lambda3 = 1.0
//! step1 = 1.0
//! step3 = 1.0
//!
//! [gains]             # scalar gain, or path to a Radiance .hdr gain image
//! d1 = 0.25
//! d2 = 1.0
//! d3 = "gain3.hdr"
//!
//! [observations]      # Radiance .hdr, paths relative to this file
//! y1 = "y1.hdr"
//! y2 = "y2.hdr"
//! y3 = "y3.hdr"
//! ```
//!
//! Instead of `[observations]` a `[synthetic]` table (`height`, `width`,
//! `seed`, optional `channels`, `noise`) generates a random latent image and
//! observes it through the configured gains.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DegradationOp, OracleProblem, SolverConfig};
use crate::error::{Error, Result};
use crate::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub d1: GainSpec,
    pub d2: GainSpec,
    pub d3: GainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub lambda1: f64,
    pub lambda3: f64,
    pub step1: f64,
    pub step3: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda3: 1.0,
            step1: 1.0,
            step3: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observations {
    pub y1: PathBuf,
    pub y2: PathBuf,
    pub y3: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    #[serde(default = "three")]
    pub channels: usize,
    #[serde(default)]
    pub noise: f64,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub weights: Weights,
    pub gains: Gains,
    pub observations: Option<Observations>,
    pub synthetic: Option<Synthetic>,
}

/// Where the observations of a loaded problem came from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Files,
    /// Generated; carries the latent image the observations were made from.
    Synthetic { latent: Image },
}

#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: OracleProblem,
    pub solver: SolverConfig,
    pub source: ProblemSource,
}

fn field_err(path: &Path, field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: format!("field `{field}`: {msg}"),
    }
}

impl ProblemFile {
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<LoadedProblem> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = Self::parse_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.resolve(path, base)
    }

    /// Builds the problem, reading any referenced images relative to `base`.
    /// `origin` is only used in diagnostics.
    pub fn resolve(&self, origin: &Path, base: &Path) -> Result<LoadedProblem> {
        if self.solver.max_iters == 0 {
            return Err(field_err(origin, "solver.max_iters", "must be at least 1"));
        }
        for (name, v) in [("solver.beta1", self.solver.beta1), ("solver.beta3", self.solver.beta3)] {
            if !(v > 0.0) {
                return Err(field_err(origin, name, format!("must be > 0, got {v}")));
            }
        }

        let (observed, source, shape) = match (&self.observations, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(field_err(
                    origin,
                    "observations",
                    "give either [observations] or [synthetic], not both",
                ))
            }
            (None, None) => {
                return Err(field_err(
                    origin,
                    "observations",
                    "missing; give [observations] or [synthetic]",
                ))
            }
            (Some(obs), None) => {
                let read = |field: &str, p: &Path| {
                    crate::data::rgbe::read_hdr(&base.join(p))
                        .map_err(|e| field_err(origin, field, e))
                };
                let y1 = read("observations.y1", &obs.y1)?;
                let y2 = read("observations.y2", &obs.y2)?;
                let y3 = read("observations.y3", &obs.y3)?;
                let shape = y2.dim();
                (Some([y1, y2, y3]), ProblemSource::Files, shape)
            }
            (None, Some(syn)) => {
                if syn.height == 0 || syn.width == 0 || syn.channels == 0 {
                    return Err(field_err(origin, "synthetic", "dimensions must be positive"));
                }
                if !(syn.noise >= 0.0) {
                    return Err(field_err(origin, "synthetic.noise", "must be >= 0"));
                }
                let shape = (syn.channels, syn.height, syn.width);
                let mut rng = ChaCha8Rng::seed_from_u64(syn.seed);
                let latent = Image::from_shape_simple_fn(shape, || rng.random_range(0.05..1.0));
                (None, ProblemSource::Synthetic { latent }, shape)
            }
        };

        let gain = |field: &str, spec: &GainSpec| -> Result<DegradationOp> {
            match spec {
                GainSpec::Scalar(g) => {
                    DegradationOp::uniform(shape, *g).map_err(|e| field_err(origin, field, e))
                }
                GainSpec::Image(p) => {
                    let g = crate::data::rgbe::read_hdr(&base.join(p))
                        .map_err(|e| field_err(origin, field, e))?;
                    DegradationOp::diagonal(g).map_err(|e| field_err(origin, field, e))
                }
            }
        };
        let d1 = gain("gains.d1", &self.gains.d1)?;
        let d2 = gain("gains.d2", &self.gains.d2)?;
        let d3 = gain("gains.d3", &self.gains.d3)?;

        let observed = match (observed, &source, &self.synthetic) {
            (Some(y), _, _) => y,
            (None, ProblemSource::Synthetic { latent }, Some(syn)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(syn.seed ^ 0x9e37_79b9_7f4a_7c15);
                let mut observe = |d: &DegradationOp| -> Result<Image> {
                    let noise = if syn.noise > 0.0 {
                        let n = Normal::new(0.0, syn.noise).expect("validated sigma");
                        Some(Image::from_shape_simple_fn(shape, || n.sample(&mut rng)))
                    } else {
                        None
                    };
                    d.observe(latent, noise.as_ref()).map_err(Error::from)
                };
                [observe(&d1)?, observe(&d2)?, observe(&d3)?]
            }
            _ => unreachable!("source matches the observation branch"),
        };

        let w = &self.weights;
        let problem = OracleProblem::new(observed, [d1, d2, d3])
            .and_then(|p| p.with_weights(w.lambda1, w.lambda3))
            .and_then(|p| p.with_steps(w.step1, w.step3))
            .map_err(|e| field_err(origin, "weights", e))?;
        Ok(LoadedProblem {
            problem,
            solver: self.solver,
            source,
        })
    }
}
