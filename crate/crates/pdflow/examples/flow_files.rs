//! Flow-field file handling: binary `.flo` round trips, the unknown-pixel
//! mask, and color-wheel rendering.
//!
//!     cargo run --example flow_files

use pdflow::io::{decode_flo, encode_flo, flow_to_color, write_color_image, write_flo};
use pdflow::synth::{oseen_field, VortexSpec};
use pdflow::{FlowField, ScalarGrid};

fn main() -> pdflow::Result<()> {
    // A little swirl to have something worth rendering. Components are
    // snapped to single precision up front: that is what the file stores,
    // so the round trip below is exactly lossless.
    let swirl = oseen_field(
        &[VortexSpec {
            center: (32.0, 32.0),
            circulation: 180.0,
            core_radius: 9.0,
        }],
        64,
        64,
    );
    let flow = FlowField {
        u1: swirl.u1.map(|v| v as f32 as f64),
        u2: swirl.u2.map(|v| v as f32 as f64),
    };

    // Byte layout: magic tag, dimensions, interleaved f32 pairs.
    let bytes = encode_flo(&flow);
    println!(
        "encoded {}x{} field: {} bytes (12-byte header + 8 per pixel), magic reads {:?}",
        flow.width(),
        flow.height(),
        bytes.len(),
        std::str::from_utf8(&bytes[0..4]).unwrap()
    );
    let (back, mask) = decode_flo(&bytes, std::path::Path::new("memory"))?;
    assert_eq!(back, flow);
    println!(
        "round trip bitwise identical, {} valid pixels",
        mask.count_valid()
    );

    write_flo(&flow, "swirl.flo")?;

    // Direction maps to hue, magnitude to saturation; the center of the
    // wheel (zero motion) is white.
    let img = flow_to_color(&flow, None, None);
    write_color_image(&img, "swirl.png")?;
    println!("wrote swirl.flo and swirl.png");

    // Unknown pixels (sentinel values above 1e9) come back masked out.
    let mut broken = FlowField {
        u1: ScalarGrid::constant(4, 4, 0.5),
        u2: ScalarGrid::zeros(4, 4),
    };
    broken.u1.set(1, 1, 2e9);
    let (decoded, mask) = decode_flo(&encode_flo(&broken), std::path::Path::new("memory"))?;
    println!(
        "sentinel pixel masked: valid {}/{}, replaced value {}",
        mask.count_valid(),
        16,
        decoded.u1.at(1, 1)
    );
    Ok(())
}
