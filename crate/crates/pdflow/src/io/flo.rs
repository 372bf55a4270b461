//! Binary flow-field interchange format.
//!
//! Layout, all little-endian: a 4-byte magic float tag (its bytes read
//! "PIEH"), 32-bit width and height, then row-major interleaved
//! single-precision `(u, v)` pairs. Components with magnitude above 1e9
//! are the conventional "unknown flow" sentinel and are reported through
//! the returned mask.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FlowField, PixelMask, ScalarGrid};

/// Magic tag; encodes to the bytes `PIEH`.
pub const FLO_MAGIC: f32 = 202021.25;

/// Components at or above this magnitude mark a pixel as unknown.
const UNKNOWN_THRESHOLD: f32 = 1e9;

/// Assemble the byte layout from raw parts. `uv` is row-major.
pub fn encode_flo_parts(width: u32, height: u32, uv: &[(f32, f32)]) -> Vec<u8> {
    assert_eq!(uv.len(), (width as usize) * (height as usize));
    let mut bytes = Vec::with_capacity(12 + 8 * uv.len());
    bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    bytes.extend_from_slice(&(width as i32).to_le_bytes());
    bytes.extend_from_slice(&(height as i32).to_le_bytes());
    for &(u, v) in uv {
        bytes.extend_from_slice(&u.to_le_bytes());
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Encode a flow field; components are stored in single precision.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let uv: Vec<(f32, f32)> = flow
        .u1
        .data()
        .iter()
        .zip(flow.u2.data())
        .map(|(&u, &v)| (u as f32, v as f32))
        .collect();
    encode_flo_parts(flow.width() as u32, flow.height() as u32, &uv)
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadFlowFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decode the byte layout into a flow field plus validity mask. Unknown
/// or non-finite samples are masked out and stored as zero.
pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<(FlowField, PixelMask)> {
    if bytes.len() < 12 {
        return Err(bad(path, "shorter than the 12-byte header"));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(bad(
            path,
            format!("bad magic {magic} (expected {FLO_MAGIC})"),
        ));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || width > 1_000_000 || height > 1_000_000 {
        return Err(bad(
            path,
            format!("implausible dimensions {width}x{height}"),
        ));
    }
    let (w, h) = (width as usize, height as usize);
    if w < 2 || h < 2 {
        return Err(bad(path, format!("{w}x{h} grid below the 2x2 minimum")));
    }
    let need = 12 + 8 * w * h;
    if bytes.len() < need {
        return Err(bad(
            path,
            format!("truncated payload: {} bytes, need {need}", bytes.len()),
        ));
    }

    let mut u1 = ScalarGrid::zeros(w, h);
    let mut u2 = ScalarGrid::zeros(w, h);
    let mut mask = PixelMask::all_valid(w, h);
    for (i, chunk) in bytes[12..need].chunks_exact(8).enumerate() {
        let u = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let v = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
        let known = u.is_finite()
            && v.is_finite()
            && u.abs() < UNKNOWN_THRESHOLD
            && v.abs() < UNKNOWN_THRESHOLD;
        let (x, y) = (i % w, i / w);
        if known {
            u1.set(x, y, u as f64);
            u2.set(x, y, v as f64);
        } else {
            mask.set(x, y, false);
        }
    }
    Ok((FlowField { u1, u2 }, mask))
}

/// Write a flow field to disk.
pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_flo(flow);
    File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Read a flow field and its validity mask from disk.
pub fn read_flo(path: impl AsRef<Path>) -> Result<(FlowField, PixelMask)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes, path)
}
