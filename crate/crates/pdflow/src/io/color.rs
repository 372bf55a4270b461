//! Flow visualization with the standard 55-entry color wheel: hue encodes
//! direction, saturation encodes magnitude.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FlowField, PixelMask};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Segment lengths of the wheel: red-yellow, yellow-green, green-cyan,
/// cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let ramp = |i: usize, len: usize| (255.0 * i as f64 / len as f64).floor();
    for i in 0..SEGMENTS[0] {
        wheel.push([255.0, ramp(i, SEGMENTS[0]), 0.0]);
    }
    for i in 0..SEGMENTS[1] {
        wheel.push([255.0 - ramp(i, SEGMENTS[1]), 255.0, 0.0]);
    }
    for i in 0..SEGMENTS[2] {
        wheel.push([0.0, 255.0, ramp(i, SEGMENTS[2])]);
    }
    for i in 0..SEGMENTS[3] {
        wheel.push([0.0, 255.0 - ramp(i, SEGMENTS[3]), 255.0]);
    }
    for i in 0..SEGMENTS[4] {
        wheel.push([ramp(i, SEGMENTS[4]), 0.0, 255.0]);
    }
    for i in 0..SEGMENTS[5] {
        wheel.push([255.0, 0.0, 255.0 - ramp(i, SEGMENTS[5])]);
    }
    wheel
}

fn compute_color(u: f64, v: f64, wheel: &[[f64; 3]]) -> [u8; 3] {
    let ncols = wheel.len();
    let rad = u.hypot(v);
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (angle + 1.0) / 2.0 * (ncols - 1) as f64;
    let k0 = (fk.floor() as usize).min(ncols - 1);
    let k1 = (k0 + 1) % ncols;
    let f = fk - k0 as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let col0 = wheel[k0][c] / 255.0;
        let col1 = wheel[k1][c] / 255.0;
        let mut col = (1.0 - f) * col0 + f * col1;
        if rad <= 1.0 {
            // Shrink toward white as the magnitude drops.
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        rgb[c] = (255.0 * col).floor() as u8;
    }
    rgb
}

/// Render a flow field as an RGB image. Magnitudes are normalized by
/// `max_magnitude` when given, otherwise by the 99th percentile of the
/// valid magnitudes. Masked-out pixels are black; zero flow is white.
pub fn flow_to_color(
    flow: &FlowField,
    max_magnitude: Option<f64>,
    mask: Option<&PixelMask>,
) -> RgbImage {
    let (w, h) = flow.dims();
    let wheel = color_wheel();

    let norm = match max_magnitude {
        Some(m) => m.max(1e-9),
        None => {
            let mut mags: Vec<f64> = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    if mask.is_none_or(|m| m.at(x, y)) {
                        mags.push(flow.u1.at(x, y).hypot(flow.u2.at(x, y)));
                    }
                }
            }
            if mags.is_empty() {
                1e-9
            } else {
                mags.sort_by(f64::total_cmp);
                let idx = ((mags.len() - 1) as f64 * 0.99).round() as usize;
                mags[idx].max(1e-9)
            }
        }
    };

    let mut data = vec![0u8; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let i = 3 * (y * w + x);
            if !mask.is_none_or(|m| m.at(x, y)) {
                continue; // unknown stays black
            }
            let rgb = compute_color(flow.u1.at(x, y) / norm, flow.u2.at(x, y) / norm, &wheel);
            data[i..i + 3].copy_from_slice(&rgb);
        }
    }
    RgbImage {
        width: w,
        height: h,
        data,
    }
}

/// Write an RGB image as binary PPM (P6).
pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
        out.write_all(&img.data)?;
        out.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Write an RGB image as 8-bit PNG.
pub fn write_png_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder
        .write_header()
        .and_then(|mut w| w.write_image_data(&img.data))
        .map_err(|e| Error::BadImage {
            path: path.to_path_buf(),
            reason: format!("png encode: {e}"),
        })
}

/// Write a color image, choosing PPM or PNG by extension.
pub fn write_color_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ppm") => write_ppm(img, path),
        _ => write_png_rgb(img, path),
    }
}
