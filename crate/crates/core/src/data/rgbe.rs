//! Radiance RGBE (`.hdr`) files, backed by the `image` crate's codec.
//!
//! Each pixel stores three 8-bit mantissas sharing one exponent, so a channel
//! is reproduced to within `2^(e-8)` where `2^(e-1) <= max channel < 2^e`:
//! at most 1/128 of the pixel's largest channel.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::hdr::{HdrDecoder, HdrEncoder};
use image::{DynamicImage, Rgb};

use crate::error::{Error, Result};
use crate::Image;

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Reads a Radiance file into a `(3, H, W)` linear radiance image.
pub fn read_hdr(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = HdrDecoder::new(BufReader::new(file)).map_err(|e| codec_err(path, e))?;
    let rgb = DynamicImage::from_decoder(decoder)
        .map_err(|e| codec_err(path, e))?
        .into_rgb32f();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = rgb.as_raw();
    Ok(Image::from_shape_fn((3, h, w), |(c, i, j)| {
        raw[(i * w + j) * 3 + c] as f64
    }))
}

/// Writes a `(3, H, W)` image. Negative and non-finite values are stored as 0.
pub fn write_hdr(path: &Path, image: &Image) -> Result<()> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::shape("hdr image", &[3, h, w], &[c, h, w]));
    }
    let pixels: Vec<Rgb<f32>> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .map(|(i, j)| {
            let px = |c: usize| {
                let v = image[[c, i, j]];
                if v.is_finite() && v > 0.0 {
                    v as f32
                } else {
                    0.0
                }
            };
            Rgb([px(0), px(1), px(2)])
        })
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    HdrEncoder::new(BufWriter::new(file))
        .encode(&pixels, w, h)
        .map_err(|e| codec_err(path, e))
}
