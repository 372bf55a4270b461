//! File formats and configuration: grayscale image I/O (PGM, PNG), the
//! binary flow-field interchange format, color-coded flow rendering, and
//! key=value run configuration.

mod color;
mod config;
mod flo;
mod image;

pub use color::{flow_to_color, write_color_image, write_png_rgb, write_ppm, RgbImage};
pub use config::RunConfig;
pub use flo::{decode_flo, encode_flo, encode_flo_parts, read_flo, write_flo, FLO_MAGIC};
pub use image::{read_image, write_gray_image, write_pgm, write_png_gray};
