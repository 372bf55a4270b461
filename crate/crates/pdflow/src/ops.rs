//! Discrete linear operators coupling a flow field to its dual variables.
//!
//! The operator `K` stacks forward-difference gradients of both flow
//! components with a weighted first-order constraint row: a divergence for
//! the refinement model (M1), a curl for the angular model (M2). Its
//! adjoint is built from the exact transposed stencils so that
//! `<K u, d> == <u, K* d>` holds in floating point up to rounding, which
//! is what the saddle-point iteration's convergence argument needs.
//!
//! Gradients use forward differences with the derivative zeroed on the
//! last row/column; the matching divergence uses backward differences
//! with boundary truncation. This is the standard total-variation
//! discretization whose operator norm is bounded by sqrt(8).

use rayon::join;

use crate::error::{Error, Result};
use crate::grid::{FlowField, ScalarGrid};

/// Grids below this many pixels skip task parallelism.
const PAR_MIN_PIXELS: usize = 64 * 64;

/// Which variational model the operators and the solver realize.
///
/// `Hs` is the quadratic (Horn-Schunck style) model used as the phase-one
/// initializer; `M1` is the two-phase divergence-penalized refinement;
/// `M2` is the single-phase curl-penalized estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Hs,
    M1,
    M2,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Hs => "hs",
            Model::M1 => "m1",
            Model::M2 => "m2",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hs" => Ok(Model::Hs),
            "m1" => Ok(Model::M1),
            "m2" => Ok(Model::M2),
            other => Err(Error::InvalidParameter {
                name: "model",
                reason: format!("unknown model {other:?}, expected hs, m1 or m2"),
            }),
        }
    }
}

/// Nonnegative per-pixel weight applied to the constraint row of `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid {
    pub values: ScalarGrid,
}

impl WeightGrid {
    /// Weight of zero everywhere: the constraint row vanishes and `K`
    /// reduces to the pure total-variation operator.
    pub fn zero(width: usize, height: usize) -> Self {
        WeightGrid {
            values: ScalarGrid::zeros(width, height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

/// A pair of scalar grids interpreted as the x/y components of a
/// per-pixel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarGrid,
    pub y: ScalarGrid,
}

impl VectorField {
    pub fn zeros(width: usize, height: usize) -> Self {
        VectorField {
            x: ScalarGrid::zeros(width, height),
            y: ScalarGrid::zeros(width, height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.x.dims()
    }
}

/// Dual variables: one vector field per flow component (dual to the
/// gradient rows) and one scalar field dual to the weighted
/// divergence/curl row.
///
/// Under the total-variation models the dual proximal step projects
/// `d1` and `d2` onto `[-alpha, alpha]`, so their components stay in
/// that box after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub d1: VectorField,
    pub d2: VectorField,
    pub d3: ScalarGrid,
}

impl DualState {
    pub fn zeros(width: usize, height: usize) -> Self {
        DualState {
            d1: VectorField::zeros(width, height),
            d2: VectorField::zeros(width, height),
            d3: ScalarGrid::zeros(width, height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.d3.dims()
    }

    pub fn same_dims(&self, other: &DualState) -> bool {
        self.dims() == other.dims()
    }

    /// Sum of absolute values over all five component grids.
    pub fn l1_sum(&self) -> f64 {
        self.d1.x.l1_sum()
            + self.d1.y.l1_sum()
            + self.d2.x.l1_sum()
            + self.d2.y.l1_sum()
            + self.d3.l1_sum()
    }

    /// Inner product over all five component grids.
    pub fn dot(&self, other: &DualState) -> f64 {
        self.d1.x.dot(&other.d1.x)
            + self.d1.y.dot(&other.d1.y)
            + self.d2.x.dot(&other.d2.x)
            + self.d2.y.dot(&other.d2.y)
            + self.d3.dot(&other.d3)
    }
}

/// Image-driven weight for the divergence penalty: the squared intensity.
/// With intensities normalized to [0, 1] the weight also lies in [0, 1].
pub fn weight_m1(f: &ScalarGrid) -> WeightGrid {
    WeightGrid {
        values: f.map(|v| v * v),
    }
}

/// Anisotropic weight for the curl penalty:
/// `lambda^2 / (|grad f|^2 + lambda^2)` with central-difference gradients.
/// Close to 1 in flat regions, small at strong edges.
pub fn weight_m2(f: &ScalarGrid, lambda: f64) -> Result<WeightGrid> {
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("{lambda} must be positive"),
        });
    }
    let (fx, fy) = crate::grid::central_gradient(f);
    let l2 = lambda * lambda;
    let mut values = ScalarGrid::zeros(f.width(), f.height());
    for ((o, gx), gy) in values
        .data_mut()
        .iter_mut()
        .zip(fx.data().iter())
        .zip(fy.data().iter())
    {
        *o = l2 / (gx * gx + gy * gy + l2);
    }
    Ok(WeightGrid { values })
}

#[inline]
fn forward_dx_into(u: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let row = y * w;
        for x in 0..w - 1 {
            out[row + x] = u[row + x + 1] - u[row + x];
        }
        out[row + w - 1] = 0.0;
    }
}

#[inline]
fn forward_dy_into(u: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h - 1 {
        let row = y * w;
        for x in 0..w {
            out[row + x] = u[row + w + x] - u[row + x];
        }
    }
    out[(h - 1) * w..].fill(0.0);
}

/// Transpose of `forward_dx` negated, i.e. the x part of the divergence:
/// `q(x) - q(x-1)` with boundary truncation. Accumulates into `out`.
#[inline]
fn div_x_accum(q: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let row = y * w;
        out[row] += q[row];
        for x in 1..w - 1 {
            out[row + x] += q[row + x] - q[row + x - 1];
        }
        out[row + w - 1] += -q[row + w - 2];
    }
}

#[inline]
fn div_y_accum(q: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for x in 0..w {
        out[x] += q[x];
    }
    for y in 1..h - 1 {
        let row = y * w;
        for x in 0..w {
            out[row + x] += q[row + x] - q[row - w + x];
        }
    }
    let last = (h - 1) * w;
    for x in 0..w {
        out[last + x] += -q[last - w + x];
    }
}

/// Forward-difference gradient; the derivative is zero on the last
/// column (x part) and last row (y part).
pub fn gradient(u: &ScalarGrid) -> VectorField {
    let (w, h) = u.dims();
    let mut out = VectorField::zeros(w, h);
    forward_dx_into(u.data(), w, h, out.x.data_mut());
    forward_dy_into(u.data(), w, h, out.y.data_mut());
    out
}

/// Discrete divergence, the exact negative transpose of [`gradient`]:
/// `<gradient(u), p> = <u, -divergence(p)>` holds to rounding error.
pub fn divergence(p: &VectorField) -> ScalarGrid {
    let (w, h) = p.dims();
    let mut out = ScalarGrid::zeros(w, h);
    div_x_accum(p.x.data(), w, h, out.data_mut());
    div_y_accum(p.y.data(), w, h, out.data_mut());
    out
}

fn check_flow_phi(u: &FlowField, phi: &WeightGrid, context: &'static str) -> Result<()> {
    if u.dims() != phi.dims() {
        return Err(Error::dims(u.dims(), phi.dims(), context));
    }
    Ok(())
}

/// Apply `K`: gradients of both flow components plus the weighted
/// constraint row (divergence for M1, curl for M2, zero for the
/// quadratic initializer model).
pub fn apply_k(model: Model, u: &FlowField, phi: &WeightGrid) -> Result<DualState> {
    check_flow_phi(u, phi, "apply K")?;
    let (w, h) = u.dims();
    let mut out = DualState::zeros(w, h);
    apply_k_into(model, u, phi, &mut out);
    Ok(out)
}

pub(crate) fn apply_k_into(model: Model, u: &FlowField, phi: &WeightGrid, out: &mut DualState) {
    let (w, h) = u.dims();
    debug_assert_eq!(phi.dims(), (w, h));
    debug_assert_eq!(out.dims(), (w, h));

    let u1 = u.u1.data();
    let u2 = u.u2.data();
    let phi = phi.values.data();

    let d3_task = |d3: &mut ScalarGrid| {
        let out3 = d3.data_mut();
        match model {
            Model::Hs => out3.fill(0.0),
            Model::M1 => {
                // phi * (d/dx u1 + d/dy u2)
                for y in 0..h {
                    let row = y * w;
                    for x in 0..w {
                        let dx = if x < w - 1 {
                            u1[row + x + 1] - u1[row + x]
                        } else {
                            0.0
                        };
                        let dy = if y < h - 1 {
                            u2[row + w + x] - u2[row + x]
                        } else {
                            0.0
                        };
                        out3[row + x] = phi[row + x] * (dx + dy);
                    }
                }
            }
            Model::M2 => {
                // phi * (d/dy u1 - d/dx u2)
                for y in 0..h {
                    let row = y * w;
                    for x in 0..w {
                        let dy = if y < h - 1 {
                            u1[row + w + x] - u1[row + x]
                        } else {
                            0.0
                        };
                        let dx = if x < w - 1 {
                            u2[row + x + 1] - u2[row + x]
                        } else {
                            0.0
                        };
                        out3[row + x] = phi[row + x] * (dy - dx);
                    }
                }
            }
        }
    };

    if w * h >= PAR_MIN_PIXELS {
        let DualState { d1, d2, d3 } = out;
        join(
            || {
                join(
                    || forward_dx_into(u1, w, h, d1.x.data_mut()),
                    || forward_dy_into(u1, w, h, d1.y.data_mut()),
                )
            },
            || {
                join(
                    || {
                        join(
                            || forward_dx_into(u2, w, h, d2.x.data_mut()),
                            || forward_dy_into(u2, w, h, d2.y.data_mut()),
                        )
                    },
                    || d3_task(d3),
                )
            },
        );
    } else {
        forward_dx_into(u1, w, h, out.d1.x.data_mut());
        forward_dy_into(u1, w, h, out.d1.y.data_mut());
        forward_dx_into(u2, w, h, out.d2.x.data_mut());
        forward_dy_into(u2, w, h, out.d2.y.data_mut());
        d3_task(&mut out.d3);
    }
}

/// Apply the exact discrete adjoint of `K` for the same weight grid.
pub fn apply_k_adjoint(model: Model, d: &DualState, phi: &WeightGrid) -> Result<FlowField> {
    if d.dims() != phi.dims() {
        return Err(Error::dims(d.dims(), phi.dims(), "apply K adjoint"));
    }
    let (w, h) = d.dims();
    let mut out = FlowField::zeros(w, h);
    let mut scratch = ScalarGrid::zeros(w, h);
    apply_k_adjoint_into(model, d, phi, &mut out, &mut scratch);
    Ok(out)
}

/// `scratch` holds the weighted third dual component between passes.
pub(crate) fn apply_k_adjoint_into(
    model: Model,
    d: &DualState,
    phi: &WeightGrid,
    out: &mut FlowField,
    scratch: &mut ScalarGrid,
) {
    let (w, h) = d.dims();
    debug_assert_eq!(phi.dims(), (w, h));
    debug_assert_eq!(out.dims(), (w, h));
    debug_assert_eq!(scratch.dims(), (w, h));

    if model != Model::Hs {
        let s = scratch.data_mut();
        for ((o, p), v) in s.iter_mut().zip(phi.values.data()).zip(d.d3.data()) {
            *o = p * v;
        }
    }
    let weighted_d3 = scratch.data();

    let comp1 = |g: &mut ScalarGrid| {
        let buf = g.data_mut();
        buf.fill(0.0);
        div_x_accum(d.d1.x.data(), w, h, buf);
        div_y_accum(d.d1.y.data(), w, h, buf);
        match model {
            Model::Hs => {}
            Model::M1 => div_x_accum(weighted_d3, w, h, buf),
            Model::M2 => div_y_accum(weighted_d3, w, h, buf),
        }
        for v in buf.iter_mut() {
            *v = -*v;
        }
    };
    let comp2 = |g: &mut ScalarGrid| {
        let buf = g.data_mut();
        buf.fill(0.0);
        div_x_accum(d.d2.x.data(), w, h, buf);
        div_y_accum(d.d2.y.data(), w, h, buf);
        match model {
            Model::Hs => {
                for v in buf.iter_mut() {
                    *v = -*v;
                }
            }
            Model::M1 => {
                div_y_accum(weighted_d3, w, h, buf);
                for v in buf.iter_mut() {
                    *v = -*v;
                }
            }
            Model::M2 => {
                // The curl row enters the second component with opposite
                // sign: K* u2 = -div(d2) + div_x(phi d3). Negating first
                // lets the last term accumulate in place.
                for v in buf.iter_mut() {
                    *v = -*v;
                }
                div_x_accum(weighted_d3, w, h, buf);
            }
        }
    };

    if w * h >= PAR_MIN_PIXELS {
        join(|| comp1(&mut out.u1), || comp2(&mut out.u2));
    } else {
        comp1(&mut out.u1);
        comp2(&mut out.u2);
    }
}

/// Inner product between a flow field and another flow field.
pub fn flow_dot(a: &FlowField, b: &FlowField) -> f64 {
    a.u1.dot(&b.u1) + a.u2.dot(&b.u2)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Power-iteration estimate of the operator norm `|K|`, computed through
/// Rayleigh quotients of `K* K`. The sequence of estimates is
/// nondecreasing, so more iterations can only tighten the bound from
/// below; the true norm is never exceeded.
///
/// The starting vector is pseudo-random with a fixed seed, making the
/// estimate deterministic.
pub fn operator_norm_estimate(model: Model, phi: &WeightGrid, iterations: usize) -> f64 {
    assert!(iterations >= 1, "power iteration needs at least one step");
    let (w, h) = phi.dims();
    let mut seed = 0x5eed_0f10u64;
    let mut v = FlowField::zeros(w, h);
    for g in [&mut v.u1, &mut v.u2] {
        for o in g.data_mut() {
            *o = (splitmix64(&mut seed) >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        }
    }
    let mut norm = flow_dot(&v, &v).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    for g in [&mut v.u1, &mut v.u2] {
        for o in g.data_mut() {
            *o /= norm;
        }
    }

    let mut dual = DualState::zeros(w, h);
    let mut next = FlowField::zeros(w, h);
    let mut scratch = ScalarGrid::zeros(w, h);
    let mut rayleigh: f64 = 0.0;
    for _ in 0..iterations {
        apply_k_into(model, &v, phi, &mut dual);
        apply_k_adjoint_into(model, &dual, phi, &mut next, &mut scratch);
        // v is unit, so <K*K v, v> is the Rayleigh quotient.
        rayleigh = flow_dot(&next, &v).max(rayleigh);
        norm = flow_dot(&next, &next).sqrt();
        if norm == 0.0 {
            break;
        }
        for (dst, src) in [(&mut v.u1, &next.u1), (&mut v.u2, &next.u2)] {
            for (o, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *o = s / norm;
            }
        }
    }
    rayleigh.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random_grid(w: usize, h: usize, seed: u64) -> ScalarGrid {
        let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d) ^ 0x1234_5678;
        ScalarGrid::from_fn(w, h, |_, _| {
            (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    fn pseudo_random_flow(w: usize, h: usize, seed: u64) -> FlowField {
        FlowField {
            u1: pseudo_random_grid(w, h, seed).map(|v| 2.0 * v - 1.0),
            u2: pseudo_random_grid(w, h, seed + 101).map(|v| 2.0 * v - 1.0),
        }
    }

    fn pseudo_random_dual(w: usize, h: usize, seed: u64) -> DualState {
        DualState {
            d1: VectorField {
                x: pseudo_random_grid(w, h, seed).map(|v| 2.0 * v - 1.0),
                y: pseudo_random_grid(w, h, seed + 1).map(|v| 2.0 * v - 1.0),
            },
            d2: VectorField {
                x: pseudo_random_grid(w, h, seed + 2).map(|v| 2.0 * v - 1.0),
                y: pseudo_random_grid(w, h, seed + 3).map(|v| 2.0 * v - 1.0),
            },
            d3: pseudo_random_grid(w, h, seed + 4).map(|v| 2.0 * v - 1.0),
        }
    }

    fn dual_dot_flow_parts(kd: &DualState, d: &DualState) -> f64 {
        kd.dot(d)
    }

    #[test]
    fn weight_m1_examples() {
        let zero = ScalarGrid::zeros(4, 4);
        assert!(weight_m1(&zero).values.data().iter().all(|&v| v == 0.0));
        let one = ScalarGrid::constant(4, 4, 1.0);
        assert!(weight_m1(&one).values.data().iter().all(|&v| v == 1.0));
        let half = ScalarGrid::constant(4, 4, 0.5);
        assert!(weight_m1(&half).values.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn weight_m2_flat_image_is_one() {
        let f = ScalarGrid::constant(6, 6, 0.7);
        let w = weight_m2(&f, 0.1).unwrap();
        assert!(w.values.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weight_m2_half_at_matched_gradient() {
        // Ramp with slope lambda in x: |grad f|^2 == lambda^2 away from
        // the replicated boundary columns, so the weight is exactly 1/2.
        let lambda = 0.05;
        let f = ScalarGrid::from_fn(12, 6, |x, _| lambda * x as f64);
        let w = weight_m2(&f, lambda).unwrap();
        for y in 0..6 {
            for x in 1..11 {
                assert!((w.values.at(x, y) - 0.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn weight_m2_matches_formula_oracle() {
        let f = pseudo_random_grid(8, 8, 21);
        let lambda = 0.1;
        let w = weight_m2(&f, lambda).unwrap();
        let (fx, fy) = crate::grid::central_gradient(&f);
        for i in 0..64 {
            let g2 = fx.data()[i] * fx.data()[i] + fy.data()[i] * fy.data()[i];
            let expect = lambda * lambda / (g2 + lambda * lambda);
            assert!((w.values.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_m2_bounded_and_one_only_where_gradient_vanishes() {
        let f = pseudo_random_grid(10, 9, 33);
        let w = weight_m2(&f, 0.1).unwrap();
        let (fx, fy) = crate::grid::central_gradient(&f);
        for i in 0..90 {
            let v = w.values.data()[i];
            assert!(v > 0.0 && v <= 1.0);
            let grad_zero = fx.data()[i] == 0.0 && fy.data()[i] == 0.0;
            assert_eq!(v == 1.0, grad_zero);
        }
    }

    #[test]
    fn weight_m2_rejects_nonpositive_lambda() {
        let f = ScalarGrid::zeros(4, 4);
        assert!(weight_m2(&f, 0.0).is_err());
        assert!(weight_m2(&f, -1.0).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = gradient(&ScalarGrid::constant(5, 7, 3.0));
        assert!(g.x.data().iter().all(|&v| v == 0.0));
        assert!(g.y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_ramp() {
        let u = ScalarGrid::from_fn(6, 4, |x, _| x as f64);
        let g = gradient(&u);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(g.x.at(x, y), 1.0);
            }
            assert_eq!(g.x.at(5, y), 0.0);
        }
        assert!(g.y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_stencil_oracle() {
        let u = pseudo_random_grid(6, 6, 40);
        let g = gradient(&u);
        for y in 0..6usize {
            for x in 0..6usize {
                let ex = if x < 5 {
                    u.at(x + 1, y) - u.at(x, y)
                } else {
                    0.0
                };
                let ey = if y < 5 {
                    u.at(x, y + 1) - u.at(x, y)
                } else {
                    0.0
                };
                assert_eq!(g.x.at(x, y), ex);
                assert_eq!(g.y.at(x, y), ey);
            }
        }
    }

    #[test]
    fn divergence_of_zero_is_zero() {
        let p = VectorField::zeros(5, 5);
        assert!(divergence(&p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_divergence_adjoint_identity() {
        // <grad u, p> + <u, div p> == 0
        for seed in 0..20u64 {
            let u = pseudo_random_grid(7, 5, 50 + seed);
            let p = VectorField {
                x: pseudo_random_grid(7, 5, 150 + seed),
                y: pseudo_random_grid(7, 5, 250 + seed),
            };
            let g = gradient(&u);
            let lhs = g.x.dot(&p.x) + g.y.dot(&p.y);
            let rhs = -u.dot(&divergence(&p));
            assert!(
                (lhs - rhs).abs() <= 1e-10,
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn divergence_of_constant_field_interior_zero() {
        let p = VectorField {
            x: ScalarGrid::constant(6, 6, 2.0),
            y: ScalarGrid::constant(6, 6, -1.0),
        };
        let d = divergence(&p);
        for y in 1..5 {
            for x in 1..5 {
                assert_eq!(d.at(x, y), 0.0, "interior should vanish");
            }
        }
        // Boundary picks up truncation terms.
        assert_ne!(d.at(0, 0), 0.0);
    }

    #[test]
    fn apply_k_constant_flow_is_zero() {
        let u = FlowField {
            u1: ScalarGrid::constant(6, 6, 1.0),
            u2: ScalarGrid::constant(6, 6, -2.0),
        };
        let phi = WeightGrid {
            values: ScalarGrid::constant(6, 6, 1.0),
        };
        for model in [Model::Hs, Model::M1, Model::M2] {
            let out = apply_k(model, &u, &phi).unwrap();
            assert_eq!(out.l1_sum(), 0.0);
        }
    }

    #[test]
    fn apply_k_m1_unit_divergence() {
        let u = FlowField {
            u1: ScalarGrid::from_fn(6, 6, |x, _| x as f64),
            u2: ScalarGrid::zeros(6, 6),
        };
        let phi = WeightGrid {
            values: ScalarGrid::constant(6, 6, 1.0),
        };
        let out = apply_k(Model::M1, &u, &phi).unwrap();
        for y in 0..6 {
            for x in 0..5 {
                assert_eq!(out.d3.at(x, y), 1.0);
            }
            assert_eq!(out.d3.at(5, y), 0.0);
        }
    }

    #[test]
    fn apply_k_m2_rigid_rotation_curl() {
        // u = (-y, x): forward differences give (u1)_y - (u2)_x = -2 on
        // the interior stencil support.
        let u = FlowField {
            u1: ScalarGrid::from_fn(6, 6, |_, y| -(y as f64)),
            u2: ScalarGrid::from_fn(6, 6, |x, _| x as f64),
        };
        let phi = WeightGrid {
            values: ScalarGrid::constant(6, 6, 1.0),
        };
        let out = apply_k(Model::M2, &u, &phi).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(out.d3.at(x, y), -2.0);
            }
        }
    }

    #[test]
    fn apply_k_adjoint_zero_dual_is_zero() {
        let d = DualState::zeros(5, 5);
        let phi = WeightGrid {
            values: pseudo_random_grid(5, 5, 60),
        };
        for model in [Model::Hs, Model::M1, Model::M2] {
            let out = apply_k_adjoint(model, &d, &phi).unwrap();
            assert_eq!(flow_dot(&out, &out), 0.0);
        }
    }

    #[test]
    fn adjointness_holds_for_both_models() {
        for seed in 0..50u64 {
            let w = 4 + (seed as usize % 3) * 2;
            let h = 6;
            let u = pseudo_random_flow(w, h, 70 + seed);
            let d = pseudo_random_dual(w, h, 170 + seed);
            let phi = WeightGrid {
                values: pseudo_random_grid(w, h, 270 + seed),
            };
            for model in [Model::Hs, Model::M1, Model::M2] {
                let ku = apply_k(model, &u, &phi).unwrap();
                let kstar_d = apply_k_adjoint(model, &d, &phi).unwrap();
                let lhs = dual_dot_flow_parts(&ku, &d);
                let rhs = flow_dot(&u, &kstar_d);
                let scale = flow_dot(&u, &u).sqrt() * d.dot(&d).sqrt() + 1.0;
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * scale,
                    "{model:?}: <Ku,d>={lhs} vs <u,K*d>={rhs}"
                );
            }
        }
    }

    #[test]
    fn k_adjoint_with_zero_weight_reduces_to_divergence() {
        let d = pseudo_random_dual(7, 6, 80);
        let phi = WeightGrid::zero(7, 6);
        for model in [Model::M1, Model::M2] {
            let out = apply_k_adjoint(model, &d, &phi).unwrap();
            let expect1 = divergence(&d.d1).map(|v| -v);
            let expect2 = divergence(&d.d2).map(|v| -v);
            assert_eq!(out.u1, expect1, "{model:?}");
            assert_eq!(out.u2, expect2, "{model:?}");
        }
    }

    #[test]
    fn k_is_linear() {
        let (w, h) = (6, 5);
        let u = pseudo_random_flow(w, h, 90);
        let v = pseudo_random_flow(w, h, 91);
        let phi = WeightGrid {
            values: pseudo_random_grid(w, h, 92),
        };
        let (a, b) = (1.7, -0.3);
        let combo = FlowField {
            u1: ScalarGrid::from_fn(w, h, |x, y| a * u.u1.at(x, y) + b * v.u1.at(x, y)),
            u2: ScalarGrid::from_fn(w, h, |x, y| a * u.u2.at(x, y) + b * v.u2.at(x, y)),
        };
        for model in [Model::M1, Model::M2] {
            let k_combo = apply_k(model, &combo, &phi).unwrap();
            let ku = apply_k(model, &u, &phi).unwrap();
            let kv = apply_k(model, &v, &phi).unwrap();
            for (lhs, (pu, pv)) in [
                (&k_combo.d1.x, (&ku.d1.x, &kv.d1.x)),
                (&k_combo.d1.y, (&ku.d1.y, &kv.d1.y)),
                (&k_combo.d2.x, (&ku.d2.x, &kv.d2.x)),
                (&k_combo.d2.y, (&ku.d2.y, &kv.d2.y)),
                (&k_combo.d3, (&ku.d3, &kv.d3)),
            ] {
                for i in 0..w * h {
                    let expect = a * pu.data()[i] + b * pv.data()[i];
                    assert!((lhs.data()[i] - expect).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn stream_function_fields_are_divergence_free() {
        // u = (D_y psi, -D_x psi) with the same forward stencils makes the
        // discrete divergence vanish identically, so the M1 constraint row
        // is exactly zero.
        let psi = pseudo_random_grid(9, 8, 95);
        let g = gradient(&psi);
        let u = FlowField {
            u1: g.y.clone(),
            u2: g.x.map(|v| -v),
        };
        let phi = WeightGrid {
            values: pseudo_random_grid(9, 8, 96),
        };
        let out = apply_k(Model::M1, &u, &phi).unwrap();
        assert!(out.d3.l1_sum() <= 1e-10);
    }

    #[test]
    fn pure_tv_norm_estimate_below_sqrt8() {
        let phi = WeightGrid::zero(64, 64);
        let est = operator_norm_estimate(Model::M1, &phi, 200);
        assert!(est <= 8f64.sqrt() + 1e-9, "estimate {est} above sqrt(8)");
        assert!(est > 2.7, "estimate {est} implausibly small");
    }

    #[test]
    fn norm_estimate_nondecreasing_in_iterations() {
        let phi = WeightGrid {
            values: pseudo_random_grid(16, 16, 97),
        };
        let mut prev = 0.0;
        for iters in [1, 2, 5, 10, 40] {
            let est = operator_norm_estimate(Model::M1, &phi, iters);
            assert!(est + 1e-12 >= prev, "estimate decreased: {est} < {prev}");
            prev = est;
        }
    }

    #[test]
    fn norm_estimate_matches_dense_svd_oracle() {
        use nalgebra::DMatrix;
        let (w, h) = (8, 8);
        let n = w * h;
        let phi = WeightGrid {
            values: ScalarGrid::constant(w, h, 1.0),
        };
        for model in [Model::M1, Model::M2] {
            // Assemble K column by column as a dense (5n) x (2n) matrix.
            let mut dense = DMatrix::<f64>::zeros(5 * n, 2 * n);
            for j in 0..2 * n {
                let mut u = FlowField::zeros(w, h);
                if j < n {
                    u.u1.data_mut()[j] = 1.0;
                } else {
                    u.u2.data_mut()[j - n] = 1.0;
                }
                let ku = apply_k(model, &u, &phi).unwrap();
                for (block, grid) in [&ku.d1.x, &ku.d1.y, &ku.d2.x, &ku.d2.y, &ku.d3]
                    .iter()
                    .enumerate()
                {
                    for i in 0..n {
                        dense[(block * n + i, j)] = grid.data()[i];
                    }
                }
            }
            let svd = dense.svd(false, false);
            let sigma_max = svd.singular_values.max();
            let est = operator_norm_estimate(model, &phi, 4000);
            assert!(
                (est - sigma_max).abs() < 1e-6,
                "{model:?}: power {est} vs svd {sigma_max}"
            );
        }
    }
}
