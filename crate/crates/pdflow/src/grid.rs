//! Discrete image grids and the pixel-level machinery built on them:
//! derivative stencils, bicubic warping, multi-scale pyramids, flow
//! resizing and median filtering.
//!
//! All grids are row-major `f64` arrays indexed as `(x, y)` with `x` the
//! column and `y` the row. Every operation here is a pure function of its
//! inputs; identical inputs produce bitwise-identical outputs.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Grids below this many pixels are processed sequentially; threading
/// overhead dominates on tiny inputs.
const PAR_MIN_PIXELS: usize = 64 * 64;

/// A 2-D array of real values over the pixel domain.
///
/// Image intensities are normalized to `[0, 1]` on load; derivative and
/// flow-component grids are unbounded. Dimensions are at least 2x2 so that
/// every stencil has two samples per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    /// All-zero grid. Panics if either dimension is below 2.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(
            width >= 2 && height >= 2,
            "grid dimensions must be at least 2x2, got {width}x{height}"
        );
        ScalarGrid {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Grid filled with a single value.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        let mut g = Self::zeros(width, height);
        g.data.fill(value);
        g
    }

    /// Build a grid by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                g.data[y * width + x] = f(x, y);
            }
        }
        g
    }

    /// Wrap an existing row-major buffer. Checks length, dimensions and
    /// that every value is finite.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::GridTooSmall {
                width,
                height,
                min_width: 2,
                min_height: 2,
                context: "grid construction",
            });
        }
        if data.len() != width * height {
            return Err(Error::InvalidParameter {
                name: "data",
                reason: format!(
                    "buffer holds {} values, expected {}x{} = {}",
                    data.len(),
                    width,
                    height,
                    width * height
                ),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "data",
                reason: format!("non-finite value {v}"),
            });
        }
        Ok(ScalarGrid {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &ScalarGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pointwise map into a fresh grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarGrid {
        ScalarGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of absolute values, accumulated in index order.
    pub fn l1_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Euclidean inner product with another grid of the same dimensions.
    pub fn dot(&self, other: &ScalarGrid) -> f64 {
        debug_assert!(self.same_dims(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A dense displacement field: horizontal component `u1` and vertical
/// component `u2`, both in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u1: ScalarGrid,
    pub u2: ScalarGrid,
}

impl FlowField {
    pub fn new(u1: ScalarGrid, u2: ScalarGrid) -> Result<Self> {
        if !u1.same_dims(&u2) {
            return Err(Error::dims(u1.dims(), u2.dims(), "flow components"));
        }
        Ok(FlowField { u1, u2 })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            u1: ScalarGrid::zeros(width, height),
            u2: ScalarGrid::zeros(width, height),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.u1.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.u1.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.u1.dims()
    }

    pub fn same_dims(&self, other: &FlowField) -> bool {
        self.u1.same_dims(&other.u1)
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarGrid {
        let mut m = ScalarGrid::zeros(self.width(), self.height());
        for (out, (a, b)) in m
            .data_mut()
            .iter_mut()
            .zip(self.u1.data().iter().zip(self.u2.data().iter()))
        {
            *out = a.hypot(*b);
        }
        m
    }
}

/// Per-pixel validity mask; pixels flagged `false` are excluded from
/// error metrics and drawn black by the color coder.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn all_valid(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter {
                name: "mask",
                reason: format!("length {} != {}x{}", data.len(), width, height),
            });
        }
        Ok(PixelMask {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Coarse-to-fine pipeline knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidParams {
    /// Per-level downsampling factor, in (0, 1).
    pub scale_factor: f64,
    /// Requested number of levels including full resolution. The actual
    /// count is truncated so no level falls below 8x8.
    pub levels: usize,
    /// Warp-and-solve rounds per level. Zero runs a single solve pass with
    /// no warping loop and no median filtering.
    pub warps_per_level: usize,
    /// Weight of the warped second frame in the blended image used for
    /// spatial derivatives, in [0, 1].
    pub blend_ratio: f64,
    /// Apply a 5x5 median filter to the flow after each warp round.
    pub median_filter: bool,
}

impl Default for PyramidParams {
    fn default() -> Self {
        PyramidParams {
            scale_factor: 0.5,
            levels: 3,
            warps_per_level: 10,
            blend_ratio: 0.5,
            median_filter: true,
        }
    }
}

impl PyramidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::InvalidParameter {
                name: "scale_factor",
                reason: format!("{} not in (0, 1)", self.scale_factor),
            });
        }
        if self.levels == 0 {
            return Err(Error::InvalidParameter {
                name: "levels",
                reason: "must be at least 1".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.blend_ratio) {
            return Err(Error::InvalidParameter {
                name: "blend_ratio",
                reason: format!("{} not in [0, 1]", self.blend_ratio),
            });
        }
        Ok(())
    }

    /// Convenience for a single-level run (no pyramid, no warping).
    pub fn single_level() -> Self {
        PyramidParams {
            levels: 1,
            warps_per_level: 0,
            median_filter: false,
            ..Default::default()
        }
    }
}

/// Minimum edge length of any pyramid level.
pub const MIN_PYRAMID_DIM: usize = 8;

/// Temporal derivative: `f2_warped - f1`, pointwise.
pub fn temporal_derivative(f1: &ScalarGrid, f2_warped: &ScalarGrid) -> Result<ScalarGrid> {
    if !f1.same_dims(f2_warped) {
        return Err(Error::dims(
            f1.dims(),
            f2_warped.dims(),
            "temporal derivative",
        ));
    }
    let mut out = ScalarGrid::zeros(f1.width(), f1.height());
    for ((o, a), b) in out
        .data_mut()
        .iter_mut()
        .zip(f2_warped.data().iter())
        .zip(f1.data().iter())
    {
        *o = a - b;
    }
    Ok(out)
}

/// Central-difference gradient with replicated boundary samples.
pub fn central_gradient(g: &ScalarGrid) -> (ScalarGrid, ScalarGrid) {
    let (w, h) = g.dims();
    let mut gx = ScalarGrid::zeros(w, h);
    let mut gy = ScalarGrid::zeros(w, h);
    let src = g.data();
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            gx.set(x, y, (src[y * w + xp] - src[y * w + xm]) * 0.5);
            gy.set(x, y, (src[yp * w + x] - src[ym * w + x]) * 0.5);
        }
    }
    (gx, gy)
}

/// Spatial derivatives of the blended image
/// `g = (1 - blend_ratio) * f1 + blend_ratio * f2_warped`,
/// taken with central differences and replicated boundaries.
pub fn spatial_derivatives(
    f1: &ScalarGrid,
    f2_warped: &ScalarGrid,
    blend_ratio: f64,
) -> Result<(ScalarGrid, ScalarGrid)> {
    if !f1.same_dims(f2_warped) {
        return Err(Error::dims(
            f1.dims(),
            f2_warped.dims(),
            "spatial derivatives",
        ));
    }
    if !(0.0..=1.0).contains(&blend_ratio) {
        return Err(Error::InvalidParameter {
            name: "blend_ratio",
            reason: format!("{blend_ratio} not in [0, 1]"),
        });
    }
    let g = blend_images(f1, f2_warped, blend_ratio);
    Ok(central_gradient(&g))
}

/// `(1 - ratio) * f1 + ratio * f2`, pointwise.
pub fn blend_images(f1: &ScalarGrid, f2: &ScalarGrid, ratio: f64) -> ScalarGrid {
    debug_assert!(f1.same_dims(f2));
    let mut g = ScalarGrid::zeros(f1.width(), f1.height());
    for ((o, a), b) in g
        .data_mut()
        .iter_mut()
        .zip(f1.data().iter())
        .zip(f2.data().iter())
    {
        *o = (1.0 - ratio) * a + ratio * b;
    }
    g
}

/// Catmull-Rom cubic kernel (a = -0.5). Exactly interpolating: at integer
/// offsets the weight is 1 at zero and 0 elsewhere.
#[inline]
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        (((t - 5.0) * t + 8.0) * t - 4.0) * A
    } else {
        0.0
    }
}

/// Bicubic sample at real coordinates, clamping both the sample position
/// and the 4x4 support to the grid.
fn bicubic_sample(img: &ScalarGrid, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0 as isize;
    let yi = y0 as isize;

    let mut acc = 0.0;
    for j in -1..=2isize {
        let yy = (yi + j).clamp(0, h as isize - 1) as usize;
        let wy = cubic_weight(fy - j as f64);
        if wy == 0.0 {
            continue;
        }
        let row = &img.data()[yy * w..(yy + 1) * w];
        let mut row_acc = 0.0;
        for i in -1..=2isize {
            let xx = (xi + i).clamp(0, w as isize - 1) as usize;
            row_acc += cubic_weight(fx - i as f64) * row[xx];
        }
        acc += wy * row_acc;
    }
    acc
}

/// Bilinear sample with clamped coordinates.
pub(crate) fn bilinear_sample(img: &ScalarGrid, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let d = img.data();
    let top = (1.0 - fx) * d[y0 * w + x0] + fx * d[y0 * w + x1];
    let bot = (1.0 - fx) * d[y1 * w + x0] + fx * d[y1 * w + x1];
    (1.0 - fy) * top + fy * bot
}

/// Warp an image along a flow field: `out(x, y) = image(x + u1, y + u2)`
/// sampled bicubically, with coordinates clamped to the valid domain.
///
/// Zero flow reproduces the input exactly.
pub fn warp_bicubic(image: &ScalarGrid, flow: &FlowField) -> ScalarGrid {
    assert!(
        image.same_dims(&flow.u1),
        "flow dimensions {:?} do not match image {:?}",
        flow.dims(),
        image.dims()
    );
    let (w, h) = image.dims();
    let mut out = ScalarGrid::zeros(w, h);
    let u1 = flow.u1.data();
    let u2 = flow.u2.data();

    let warp_row = |y: usize, row: &mut [f64]| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            *o = bicubic_sample(image, x as f64 + u1[i], y as f64 + u2[i]);
        }
    };

    if w * h >= PAR_MIN_PIXELS {
        out.data_mut()
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| warp_row(y, row));
    } else {
        for (y, row) in out.data_mut().chunks_mut(w).enumerate() {
            warp_row(y, row);
        }
    }
    out
}

/// 5-tap binomial smoothing ([1 4 6 4 1] / 16), separable, with
/// replicated boundaries. Used as the pyramid anti-aliasing filter.
fn binomial_smooth(img: &ScalarGrid) -> ScalarGrid {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = img.dims();
    let mut tmp = ScalarGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in K.iter().enumerate() {
                let xx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += wk * img.at(xx, y);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = ScalarGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in K.iter().enumerate() {
                let yy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += wk * tmp.at(x, yy);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Resize by sampling the source at pixel-center-aligned coordinates.
fn resample_bilinear(img: &ScalarGrid, new_w: usize, new_h: usize) -> ScalarGrid {
    let (w, h) = img.dims();
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    ScalarGrid::from_fn(new_w, new_h, |x, y| {
        let src_x = (x as f64 + 0.5) * sx - 0.5;
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        bilinear_sample(img, src_x, src_y)
    })
}

/// Build a multi-scale pyramid: level 0 is the input, level k is the
/// input scaled by `scale_factor^k` (binomial smoothing, then bilinear
/// resampling). Levels are truncated at the 8x8 floor; the returned list
/// is ordered fine to coarse.
pub fn build_pyramid(image: &ScalarGrid, params: &PyramidParams) -> Vec<ScalarGrid> {
    let (w0, h0) = image.dims();
    let mut levels = vec![image.clone()];
    for k in 1..params.levels {
        let s = params.scale_factor.powi(k as i32);
        let nw = (w0 as f64 * s).round() as usize;
        let nh = (h0 as f64 * s).round() as usize;
        if nw < MIN_PYRAMID_DIM || nh < MIN_PYRAMID_DIM {
            break;
        }
        let smoothed = binomial_smooth(levels.last().unwrap());
        levels.push(resample_bilinear(&smoothed, nw, nh));
    }
    levels
}

/// Bilinear flow upsampling. Vector magnitudes are rescaled by the
/// per-axis size ratio so displacements stay in units of the new grid.
pub fn upsample_flow(flow: &FlowField, new_width: usize, new_height: usize) -> Result<FlowField> {
    let (w, h) = flow.dims();
    if new_width < w || new_height < h {
        return Err(Error::ShrinkingResize {
            old_width: w,
            old_height: h,
            new_width,
            new_height,
        });
    }
    let rx = new_width as f64 / w as f64;
    let ry = new_height as f64 / h as f64;
    let u1 = resample_bilinear(&flow.u1, new_width, new_height).map(|v| v * rx);
    let u2 = resample_bilinear(&flow.u2, new_width, new_height).map(|v| v * ry);
    Ok(FlowField { u1, u2 })
}

fn median_window(g: &ScalarGrid, x: usize, y: usize) -> f64 {
    let (w, h) = g.dims();
    let mut vals = [0.0f64; 25];
    let mut n = 0;
    let x0 = x.saturating_sub(2);
    let x1 = (x + 2).min(w - 1);
    let y0 = y.saturating_sub(2);
    let y1 = (y + 2).min(h - 1);
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            vals[n] = g.at(xx, yy);
            n += 1;
        }
    }
    let window = &mut vals[..n];
    window.sort_unstable_by(f64::total_cmp);
    window[n / 2]
}

/// 5x5 median filter applied to each flow component. Border pixels use
/// the clipped (smaller) neighborhood; the output value is always a
/// member of the window.
pub fn median_filter_5x5(flow: &FlowField) -> Result<FlowField> {
    let (w, h) = flow.dims();
    if w < 5 || h < 5 {
        return Err(Error::GridTooSmall {
            width: w,
            height: h,
            min_width: 5,
            min_height: 5,
            context: "5x5 median filter",
        });
    }
    let filter = |g: &ScalarGrid| ScalarGrid::from_fn(w, h, |x, y| median_window(g, x, y));
    Ok(FlowField {
        u1: filter(&flow.u1),
        u2: filter(&flow.u2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random_grid(w: usize, h: usize, seed: u64) -> ScalarGrid {
        // Small deterministic generator so oracle tests are reproducible.
        let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
        ScalarGrid::from_fn(w, h, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn temporal_derivative_identical_frames_is_zero() {
        let f = pseudo_random_grid(8, 8, 1);
        let d = temporal_derivative(&f, &f).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temporal_derivative_constant_difference() {
        let f1 = ScalarGrid::constant(6, 4, 0.0);
        let f2 = ScalarGrid::constant(6, 4, 0.5);
        let d = temporal_derivative(&f1, &f2).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn temporal_derivative_matches_elementwise_oracle() {
        let f1 = pseudo_random_grid(8, 8, 2);
        let f2 = pseudo_random_grid(8, 8, 3);
        let d = temporal_derivative(&f1, &f2).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(d.at(x, y), f2.at(x, y) - f1.at(x, y));
            }
        }
    }

    #[test]
    fn temporal_derivative_antisymmetric() {
        let f1 = pseudo_random_grid(7, 5, 4);
        let f2 = pseudo_random_grid(7, 5, 5);
        let d12 = temporal_derivative(&f1, &f2).unwrap();
        let d21 = temporal_derivative(&f2, &f1).unwrap();
        for (a, b) in d12.data().iter().zip(d21.data().iter()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn temporal_derivative_rejects_mismatched_dims() {
        let f1 = ScalarGrid::zeros(4, 4);
        let f2 = ScalarGrid::zeros(5, 4);
        assert!(temporal_derivative(&f1, &f2).is_err());
    }

    #[test]
    fn spatial_derivatives_of_constant_are_zero() {
        let f = ScalarGrid::constant(9, 7, 0.3);
        let (fx, fy) = spatial_derivatives(&f, &f, 0.7).unwrap();
        assert!(fx.data().iter().all(|&v| v == 0.0));
        assert!(fy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatial_derivatives_linear_ramp() {
        let w = 10usize;
        let f = ScalarGrid::from_fn(w, 6, |x, _| x as f64 / w as f64);
        let (fx, fy) = spatial_derivatives(&f, &f, 0.0).unwrap();
        for y in 0..6 {
            for x in 1..w - 1 {
                assert!((fx.at(x, y) - 1.0 / w as f64).abs() < 1e-15);
            }
            // Replicated boundary: one-sided half step.
            assert!((fx.at(0, y) - 0.5 / w as f64).abs() < 1e-15);
            assert!((fx.at(w - 1, y) - 0.5 / w as f64).abs() < 1e-15);
        }
        assert!(fy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatial_derivatives_match_stencil_oracle() {
        let f1 = pseudo_random_grid(8, 8, 6);
        let f2 = pseudo_random_grid(8, 8, 7);
        let blend = 0.4;
        let (fx, fy) = spatial_derivatives(&f1, &f2, blend).unwrap();
        // Brute-force oracle: blend then explicit central differences.
        let g = ScalarGrid::from_fn(8, 8, |x, y| 0.6 * f1.at(x, y) + 0.4 * f2.at(x, y));
        for y in 0..8usize {
            for x in 0..8usize {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(7);
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(7);
                let ex = (g.at(xp, y) - g.at(xm, y)) / 2.0;
                let ey = (g.at(x, yp) - g.at(x, ym)) / 2.0;
                assert!((fx.at(x, y) - ex).abs() < 1e-14);
                assert!((fy.at(x, y) - ey).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn warp_zero_flow_is_identity() {
        let img = pseudo_random_grid(12, 9, 8);
        let flow = FlowField::zeros(12, 9);
        let warped = warp_bicubic(&img, &flow);
        assert_eq!(img.data(), warped.data());
    }

    #[test]
    fn warp_integer_shift_matches_index_oracle() {
        let img = pseudo_random_grid(10, 8, 9);
        let flow = FlowField {
            u1: ScalarGrid::constant(10, 8, 1.0),
            u2: ScalarGrid::zeros(10, 8),
        };
        let warped = warp_bicubic(&img, &flow);
        for y in 0..8 {
            for x in 0..9 {
                assert!(
                    (warped.at(x, y) - img.at(x + 1, y)).abs() < 1e-12,
                    "shift mismatch at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn warp_constant_image_stays_constant() {
        let img = ScalarGrid::constant(9, 9, 0.42);
        let flow = FlowField {
            u1: pseudo_random_grid(9, 9, 10).map(|v| 3.0 * v - 1.5),
            u2: pseudo_random_grid(9, 9, 11).map(|v| 3.0 * v - 1.5),
        };
        let warped = warp_bicubic(&img, &flow);
        for &v in warped.data() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_sizes_follow_geometric_schedule() {
        let img = ScalarGrid::zeros(64, 64);
        let params = PyramidParams {
            levels: 3,
            ..Default::default()
        };
        let pyr = build_pyramid(&img, &params);
        let sizes: Vec<_> = pyr.iter().map(|g| g.width()).collect();
        assert_eq!(sizes, vec![64, 32, 16]);
    }

    #[test]
    fn pyramid_truncates_at_floor() {
        let img = ScalarGrid::zeros(16, 16);
        let params = PyramidParams {
            levels: 5,
            ..Default::default()
        };
        let pyr = build_pyramid(&img, &params);
        let sizes: Vec<_> = pyr.iter().map(|g| g.width()).collect();
        assert_eq!(sizes, vec![16, 8]);
    }

    #[test]
    fn pyramid_preserves_constants() {
        let img = ScalarGrid::constant(64, 48, 0.25);
        let params = PyramidParams {
            levels: 4,
            ..Default::default()
        };
        for level in build_pyramid(&img, &params) {
            for &v in level.data() {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_constant_flow_scales_magnitude() {
        let flow = FlowField {
            u1: ScalarGrid::constant(8, 8, 1.0),
            u2: ScalarGrid::zeros(8, 8),
        };
        let up = upsample_flow(&flow, 16, 16).unwrap();
        for &v in up.u1.data() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        assert!(up.u2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_zero_flow_stays_zero() {
        let flow = FlowField::zeros(8, 6);
        let up = upsample_flow(&flow, 20, 13).unwrap();
        assert!(up.u1.data().iter().all(|&v| v == 0.0));
        assert!(up.u2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_linear_ramp_matches_bilinear_oracle() {
        let flow = FlowField {
            u1: ScalarGrid::from_fn(8, 8, |x, _| x as f64),
            u2: ScalarGrid::zeros(8, 8),
        };
        let up = upsample_flow(&flow, 16, 16).unwrap();
        for y in 0..16usize {
            for x in 0..16usize {
                // Direct bilinear formula on the ramp, clamped like the
                // implementation, then scaled by the 2x size ratio.
                let sx = ((x as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 7.0);
                let x0 = sx.floor();
                let x1 = (x0 + 1.0).min(7.0);
                let fx = sx - x0;
                let expected = 2.0 * ((1.0 - fx) * x0 + fx * x1);
                assert!(
                    (up.u1.at(x, y) - expected).abs() < 1e-12,
                    "at ({x},{y}): {} vs {}",
                    up.u1.at(x, y),
                    expected
                );
            }
        }
    }

    #[test]
    fn upsample_rejects_shrinking() {
        let flow = FlowField::zeros(8, 8);
        assert!(upsample_flow(&flow, 4, 8).is_err());
    }

    #[test]
    fn median_filter_keeps_constant_flow() {
        let flow = FlowField {
            u1: ScalarGrid::constant(7, 7, 1.5),
            u2: ScalarGrid::constant(7, 7, -2.0),
        };
        let out = median_filter_5x5(&flow).unwrap();
        assert_eq!(out, flow);
    }

    #[test]
    fn median_filter_rejects_small_grids() {
        let flow = FlowField::zeros(4, 4);
        assert!(median_filter_5x5(&flow).is_err());
    }

    #[test]
    fn median_filter_removes_spike() {
        let mut u1 = ScalarGrid::zeros(9, 9);
        u1.set(4, 4, 100.0);
        let flow = FlowField {
            u1,
            u2: ScalarGrid::zeros(9, 9),
        };
        let out = median_filter_5x5(&flow).unwrap();
        assert_eq!(out.u1.at(4, 4), 0.0);
    }

    #[test]
    fn median_filter_matches_sort_oracle() {
        let flow = FlowField {
            u1: pseudo_random_grid(9, 9, 12),
            u2: pseudo_random_grid(9, 9, 13),
        };
        let out = median_filter_5x5(&flow).unwrap();
        for (comp, filtered) in [(&flow.u1, &out.u1), (&flow.u2, &out.u2)] {
            for y in 0..9usize {
                for x in 0..9usize {
                    let mut vals = Vec::new();
                    for yy in y.saturating_sub(2)..=(y + 2).min(8) {
                        for xx in x.saturating_sub(2)..=(x + 2).min(8) {
                            vals.push(comp.at(xx, yy));
                        }
                    }
                    vals.sort_by(f64::total_cmp);
                    assert_eq!(filtered.at(x, y), vals[vals.len() / 2]);
                }
            }
        }
    }

    #[test]
    fn median_output_is_window_member() {
        let flow = FlowField {
            u1: pseudo_random_grid(11, 6, 14),
            u2: pseudo_random_grid(11, 6, 15),
        };
        let out = median_filter_5x5(&flow).unwrap();
        for y in 0..6usize {
            for x in 0..11usize {
                let mut members = Vec::new();
                for yy in y.saturating_sub(2)..=(y + 2).min(5) {
                    for xx in x.saturating_sub(2)..=(x + 2).min(10) {
                        members.push(flow.u1.at(xx, yy));
                    }
                }
                assert!(members.contains(&out.u1.at(x, y)));
            }
        }
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(ScalarGrid::from_vec(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(ScalarGrid::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(ScalarGrid::from_vec(1, 4, vec![0.0; 4]).is_err());
    }
}
