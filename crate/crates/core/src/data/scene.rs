use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array3, Axis, Zip};

use crate::error::{Error, Result};
use crate::Image;

/// Gamma used to build the linearised companions `H_i`.
pub const GAMMA: f64 = 2.2;

/// Zero-based index of the reference (normal) exposure.
pub const REFERENCE: usize = 1;

pub const EXPOSURES_FILE: &str = "exposures.txt";
pub const GROUND_TRUTH_FILE: &str = "HDRImg.hdr";

/// `H = L^γ / t`.
pub fn gamma_companion(ldr: &Image, gamma: f64, exposure_time: f64) -> Image {
    ldr.mapv(|l| l.powf(gamma) / exposure_time)
}

/// One scene: three bracketed LDR exposures with their gamma-linearised
/// companions and, when available, the HDR ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureStack {
    pub name: String,
    /// `L_i` in `[0, 1]`, each `(3, H, W)`.
    pub ldr: [Image; 3],
    /// Exposure values in stops.
    pub ev: [f64; 3],
    /// `H_i = L_i^γ / t_i` with `t_i = 2^(ev_i - ev_ref)`.
    pub linear: [Image; 3],
    pub gt: Option<Image>,
    pub gamma: f64,
}

impl ExposureStack {
    pub fn new(
        name: impl Into<String>,
        ldr: [Image; 3],
        ev: [f64; 3],
        gt: Option<Image>,
        gamma: f64,
    ) -> Result<Self> {
        let shape = ldr[REFERENCE].dim();
        if shape.0 != 3 {
            return Err(Error::shape("ldr channels", &[3], &[shape.0]));
        }
        for l in &ldr {
            if l.dim() != shape {
                let (c, h, w) = l.dim();
                return Err(Error::shape("ldr", &[shape.0, shape.1, shape.2], &[c, h, w]));
            }
            if l.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("LDR values must lie in [0, 1]".into()));
            }
        }
        if let Some(gt) = &gt {
            if gt.dim() != shape {
                let (c, h, w) = gt.dim();
                return Err(Error::shape("ground truth", &[shape.0, shape.1, shape.2], &[c, h, w]));
            }
            if gt.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config("ground truth must be finite and nonnegative".into()));
            }
        }
        if ev.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config(format!("exposure values must be finite: {ev:?}")));
        }
        if !(gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        let times = exposure_times(&ev);
        let linear = [0, 1, 2].map(|i| gamma_companion(&ldr[i], gamma, times[i]));
        Ok(Self {
            name: name.into(),
            ldr,
            ev,
            linear,
            gt,
            gamma,
        })
    }

    pub fn exposure_times(&self) -> [f64; 3] {
        exposure_times(&self.ev)
    }

    /// `(height, width)`.
    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.ldr[REFERENCE].dim();
        (h, w)
    }

    /// Scenes without ground truth can only be used for inference.
    pub fn is_eval_only(&self) -> bool {
        self.gt.is_none()
    }

    /// The 6-channel network input `[L_i, H_i]`.
    pub fn input(&self, i: usize) -> Array3<f64> {
        concatenate(Axis(0), &[self.ldr[i].view(), self.linear[i].view()])
            .expect("stack images share a shape")
    }

    pub fn inputs(&self) -> [Array3<f64>; 3] {
        [0, 1, 2].map(|i| self.input(i))
    }
}

/// `t_i = 2^(ev_i - ev_ref)`.
pub fn exposure_times(ev: &[f64; 3]) -> [f64; 3] {
    ev.map(|e| (e - ev[REFERENCE]).exp2())
}

fn is_ldr_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("tif" | "tiff" | "png")
    )
}

/// Decodes a TIFF or PNG into `(3, H, W)` values in `[0, 1]`.
pub fn read_ldr(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    // 8-bit sources are promoted by 257, so v/65535 equals v8/255 exactly.
    let rgb = img.to_rgb16();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = rgb.as_raw();
    Ok(Image::from_shape_fn((3, h, w), |(c, i, j)| {
        raw[(i * w + j) * 3 + c] as f64 / 65535.0
    }))
}

pub fn parse_exposures(text: &str, path: &Path) -> Result<[f64; 3]> {
    let values: Vec<f64> = text
        .split_whitespace()
        .enumerate()
        .map(|(n, tok)| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("value {}: `{tok}`: {e}", n + 1),
            })
        })
        .collect::<Result<_>>()?;
    <[f64; 3]>::try_from(values.as_slice()).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        msg: format!("expected 3 exposure values, found {}", values.len()),
    })
}

/// Loads a scene directory: three LDR images (sorted by file name, which is
/// taken to be ascending exposure), `exposures.txt` and optionally
/// `HDRImg.hdr`.
pub fn load_scene(dir: &Path) -> Result<ExposureStack> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ldr_paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_ldr_file(p))
        .collect();
    ldr_paths.sort();
    if ldr_paths.len() != 3 {
        return Err(Error::Missing {
            path: dir.to_path_buf(),
            what: format!("exactly 3 LDR images (found {})", ldr_paths.len()),
        });
    }

    let exp_path = dir.join(EXPOSURES_FILE);
    if !exp_path.is_file() {
        return Err(Error::Missing {
            path: dir.to_path_buf(),
            what: EXPOSURES_FILE.into(),
        });
    }
    let text = std::fs::read_to_string(&exp_path).map_err(|e| Error::io(&exp_path, e))?;
    let ev = parse_exposures(&text, &exp_path)?;

    let ldr = [
        read_ldr(&ldr_paths[0])?,
        read_ldr(&ldr_paths[1])?,
        read_ldr(&ldr_paths[2])?,
    ];
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let gt = if gt_path.is_file() {
        Some(super::rgbe::read_hdr(&gt_path)?)
    } else {
        log::debug!("{}: no ground truth, scene is eval-only", dir.display());
        None
    };
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    ExposureStack::new(name, ldr, ev, gt, GAMMA).map_err(|e| match e {
        Error::Shape { what, expected, found } => Error::Parse {
            path: dir.to_path_buf(),
            msg: format!("{what}: images disagree in shape ({expected:?} vs {found:?})"),
        },
        other => other,
    })
}

/// Writes an 8-bit PNG of `image` after μ-law tone mapping.
pub fn write_png_preview(path: &Path, image: &Image, mu: f64) -> Result<()> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::shape("preview", &[3, h, w], &[c, h, w]));
    }
    let denom = (1.0 + mu).ln();
    let mut buf = vec![0u8; h * w * 3];
    Zip::indexed(image).for_each(|(c, i, j), &v| {
        let t = (1.0 + mu * v.clamp(0.0, 1.0)).ln() / denom;
        buf[(i * w + j) * 3 + c] = (t * 255.0).round() as u8;
    });
    image::save_buffer(path, &buf, w as u32, h as u32, image::ColorType::Rgb8).map_err(|e| {
        Error::Codec {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    })
}
