//! Grayscale image reading and writing.
//!
//! Readers sniff the file signature (PGM `P2`/`P5`, PNG) rather than
//! trusting extensions. Intensities are normalized to [0, 1] on load;
//! RGB inputs are converted by the usual luminance weights.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Read a grayscale image: binary or ASCII PGM, or PNG
/// (grayscale or RGB; an alpha channel is ignored). Values are scaled to
/// [0, 1] by the format's maximum sample value.
pub fn read_image(path: impl AsRef<Path>) -> Result<ScalarGrid> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        read_pgm_bytes(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        read_png_bytes(path, &bytes)
    } else {
        Err(bad(path, "unsupported format (expected PGM P2/P5 or PNG)"))
    }
}

/// PGM header tokenizer: whitespace-separated tokens with `#` comments.
struct PgmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmTokens<'a> {
    fn next_token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn next_usize(&mut self) -> Option<usize> {
        std::str::from_utf8(self.next_token()?).ok()?.parse().ok()
    }
}

fn read_pgm_bytes(path: &Path, bytes: &[u8]) -> Result<ScalarGrid> {
    let binary = bytes.starts_with(b"P5");
    let mut tok = PgmTokens { bytes, pos: 2 };
    let width = tok.next_usize().ok_or_else(|| bad(path, "missing width"))?;
    let height = tok
        .next_usize()
        .ok_or_else(|| bad(path, "missing height"))?;
    let maxval = tok
        .next_usize()
        .ok_or_else(|| bad(path, "missing maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, format!("invalid maxval {maxval}")));
    }
    let scale = 1.0 / maxval as f64;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| bad(path, "image too large"))?;

    let mut data = Vec::with_capacity(n);
    if binary {
        // A single whitespace byte separates the header from the raster.
        let start = tok.pos + 1;
        if maxval < 256 {
            let raster = bytes
                .get(start..start + n)
                .ok_or_else(|| bad(path, "truncated raster"))?;
            data.extend(raster.iter().map(|&b| b as f64 * scale));
        } else {
            let raster = bytes
                .get(start..start + 2 * n)
                .ok_or_else(|| bad(path, "truncated raster"))?;
            data.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale),
            );
        }
    } else {
        for _ in 0..n {
            let v = tok
                .next_usize()
                .ok_or_else(|| bad(path, "truncated ASCII raster"))?;
            data.push(v as f64 * scale);
        }
    }
    ScalarGrid::from_vec(width, height, data)
        .map_err(|e| bad(path, format!("bad dimensions or values: {e}")))
}

fn read_png_bytes(path: &Path, bytes: &[u8]) -> Result<ScalarGrid> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| bad(path, format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(path, format!("png: {e}")))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let pixels = &buf[..info.buffer_size()];

    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(bad(path, format!("unsupported png color type {other:?}"))),
    };
    let mut data = Vec::with_capacity(width * height);
    for px in pixels.chunks_exact(channels) {
        let v = match channels {
            1 | 2 => px[0] as f64,
            _ => 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64,
        };
        data.push(v / 255.0);
    }
    ScalarGrid::from_vec(width, height, data)
        .map_err(|e| bad(path, format!("bad dimensions or values: {e}")))
}

fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a grid as binary 8-bit PGM; values are clamped to [0, 1] and
/// quantized.
pub fn write_pgm(grid: &ScalarGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", grid.width(), grid.height())?;
        let bytes: Vec<u8> = grid.data().iter().map(|&v| quantize_u8(v)).collect();
        out.write_all(&bytes)?;
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Write a grid as 8-bit grayscale PNG.
pub fn write_png_gray(grid: &ScalarGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        grid.width() as u32,
        grid.height() as u32,
    );
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = grid.data().iter().map(|&v| quantize_u8(v)).collect();
    encoder
        .write_header()
        .and_then(|mut w| w.write_image_data(&bytes))
        .map_err(|e| bad(path, format!("png encode: {e}")))
}

/// Write a grayscale image, choosing the format by extension
/// (`.png` or anything else as PGM).
pub fn write_gray_image(grid: &ScalarGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => write_png_gray(grid, path),
        _ => write_pgm(grid, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("pdflow-img-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn black_and_white_images_map_to_zero_and_one() {
        let p = tmp("black.pgm");
        write_pgm(&ScalarGrid::zeros(4, 3), &p).unwrap();
        let g = read_image(&p).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        let p = tmp("white.pgm");
        write_pgm(&ScalarGrid::constant(4, 3, 1.0), &p).unwrap();
        let g = read_image(&p).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_roundtrip_error_bounded_by_quantization() {
        let mut s = 12345u64;
        let grid = ScalarGrid::from_fn(16, 11, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        let p = tmp("rt.pgm");
        write_pgm(&grid, &p).unwrap();
        let back = read_image(&p).unwrap();
        for (a, b) in grid.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn png_roundtrip_error_bounded_by_quantization() {
        let mut s = 999u64;
        let grid = ScalarGrid::from_fn(9, 14, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        let p = tmp("rt.png");
        write_png_gray(&grid, &p).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.dims(), (9, 14));
        for (a, b) in grid.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn ascii_pgm_with_comments_parses() {
        let p = tmp("ascii.pgm");
        std::fs::write(&p, b"P2\n# a comment\n3 2\n# another\n10\n0 5 10\n10 5 0\n").unwrap();
        let g = read_image(&p).unwrap();
        assert_eq!(g.dims(), (3, 2));
        assert_eq!(g.at(0, 0), 0.0);
        assert_eq!(g.at(1, 0), 0.5);
        assert_eq!(g.at(2, 0), 1.0);
    }

    #[test]
    fn rgb_png_converts_by_luminance() {
        let p = tmp("rgb.png");
        let file = std::fs::File::create(&p).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 2, 2);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let data = [
            255, 0, 0, 0, 255, 0, //
            0, 0, 255, 255, 255, 255,
        ];
        enc.write_header()
            .and_then(|mut w| w.write_image_data(&data))
            .unwrap();
        let g = read_image(&p).unwrap();
        assert!((g.at(0, 0) - 0.299).abs() < 1e-9);
        assert!((g.at(1, 0) - 0.587).abs() < 1e-9);
        assert!((g.at(0, 1) - 0.114).abs() < 1e-9);
        assert!((g.at(1, 1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unreadable_file_errors_with_path() {
        let err = read_image("/nonexistent/nowhere.pgm").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nowhere.pgm"), "message was: {msg}");
    }

    #[test]
    fn garbage_bytes_are_rejected() {
        let p = tmp("garbage.bin");
        std::fs::write(&p, b"not an image at all").unwrap();
        assert!(read_image(&p).is_err());
    }
}
