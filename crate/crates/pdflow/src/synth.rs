//! Analytic ground-truth flows and frame-pair synthesis for validation:
//! superposed vortices, rigid rotation, uniform translation, and a
//! band-limited random texture to carry them.

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use crate::grid::{warp_bicubic, FlowField, ScalarGrid};

/// One axisymmetric vortex: tangential speed
/// `v(r) = circulation / (2 pi r) * (1 - exp(-r^2 / core_radius^2))`,
/// zero at the center (removable limit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VortexSpec {
    /// Center in pixel coordinates.
    pub center: (f64, f64),
    /// Signed circulation in px^2/frame; the sign sets the sense of
    /// rotation.
    pub circulation: f64,
    /// Core radius in pixels, positive.
    pub core_radius: f64,
}

/// Superposition of vortex velocity fields on a `width x height` grid.
pub fn oseen_field(specs: &[VortexSpec], width: usize, height: usize) -> FlowField {
    assert!(!specs.is_empty(), "need at least one vortex");
    for s in specs {
        assert!(s.core_radius > 0.0, "core radius must be positive");
    }
    let mut flow = FlowField::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let mut u = 0.0;
            let mut v = 0.0;
            for s in specs {
                let dx = x as f64 - s.center.0;
                let dy = y as f64 - s.center.1;
                let r2 = dx * dx + dy * dy;
                if r2 == 0.0 {
                    continue;
                }
                // v_theta / r, finite as r -> 0.
                let swirl = s.circulation / (2.0 * std::f64::consts::PI * r2)
                    * (1.0 - (-r2 / (s.core_radius * s.core_radius)).exp());
                u += -dy * swirl;
                v += dx * swirl;
            }
            flow.u1.set(x, y, u);
            flow.u2.set(x, y, v);
        }
    }
    flow
}

/// Rigid rotation about `center` with angular velocity `omega`:
/// `u = (-omega (y - cy), omega (x - cx))`.
pub fn rotation_field(center: (f64, f64), omega: f64, width: usize, height: usize) -> FlowField {
    FlowField {
        u1: ScalarGrid::from_fn(width, height, |_, y| -omega * (y as f64 - center.1)),
        u2: ScalarGrid::from_fn(width, height, |x, _| omega * (x as f64 - center.0)),
    }
}

/// Uniform translation by `(dx, dy)` pixels per frame.
pub fn translation_field(dx: f64, dy: f64, width: usize, height: usize) -> FlowField {
    FlowField {
        u1: ScalarGrid::constant(width, height, dx),
        u2: ScalarGrid::constant(width, height, dy),
    }
}

/// Sum of random low-frequency sinusoids, normalized to [0.1, 0.9].
///
/// Band-limited intensity keeps the linearized brightness-constancy
/// residual small for displacements of a few pixels and avoids flat
/// regions where flow is unobservable. Deterministic in the seed.
pub fn band_limited_texture(width: usize, height: usize, seed: u64) -> ScalarGrid {
    const WAVES: usize = 20;
    let mut rng = StdRng::seed_from_u64(seed);
    let min_wavelength = 6.0;
    let max_wavelength = (width.min(height) as f64 / 2.0).max(min_wavelength + 1.0);

    let mut waves = Vec::with_capacity(WAVES);
    for _ in 0..WAVES {
        let wavelength = rng.random_range(min_wavelength..max_wavelength);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let k = std::f64::consts::TAU / wavelength;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.5..1.0);
        waves.push((k * angle.cos(), k * angle.sin(), phase, amp));
    }

    let mut img = ScalarGrid::from_fn(width, height, |x, y| {
        waves
            .iter()
            .map(|&(kx, ky, phase, amp)| amp * (kx * x as f64 + ky * y as f64 + phase).sin())
            .sum()
    });
    let lo = img.min_value();
    let hi = img.max_value();
    let span = (hi - lo).max(1e-12);
    for v in img.data_mut() {
        *v = 0.1 + 0.8 * (*v - lo) / span;
    }
    img
}

/// Posterize a [0.1, 0.9]-normalized texture into a small number of
/// equal intensity bands. The resulting step edges mimic the strong
/// gradients of structured scenes and give estimators a harder, more
/// discriminative input than the smooth wave sum.
pub fn posterize(texture: &ScalarGrid, bands: usize) -> ScalarGrid {
    assert!(bands >= 2, "need at least two intensity bands");
    texture.map(|v| {
        let q = ((v - 0.1) / 0.8 * bands as f64)
            .floor()
            .clamp(0.0, bands as f64 - 1.0);
        0.1 + 0.8 * (q + 0.5) / bands as f64
    })
}

/// Synthesize a frame pair with known ground truth: `f1` is the texture
/// and `f2` samples the texture backwards along the flow, so `flow` is
/// the forward displacement from frame one to frame two.
pub fn synthesize_pair(texture: &ScalarGrid, flow: &FlowField) -> (ScalarGrid, ScalarGrid) {
    let negated = FlowField {
        u1: flow.u1.map(|v| -v),
        u2: flow.u2.map(|v| -v),
    };
    let f2 = warp_bicubic(texture, &negated);
    (texture.clone(), f2)
}

/// Default synthetic vortex-pair scene: two equal-and-opposite vortices
/// on a 128x128 band-limited texture. Displacements range from sub-pixel
/// to roughly 2.5 px, small enough for single-level estimation.
pub fn default_vortex_pair() -> [VortexSpec; 2] {
    [
        VortexSpec {
            center: (44.0, 64.0),
            circulation: 300.0,
            core_radius: 12.0,
        },
        VortexSpec {
            center: (84.0, 64.0),
            circulation: -300.0,
            core_radius: 12.0,
        },
    ]
}

pub const DEFAULT_VORTEX_SIZE: usize = 128;
pub const DEFAULT_TEXTURE_SEED: u64 = 7;
