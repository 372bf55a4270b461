//! Variational optical flow with divergence- and curl-penalized
//! regularization, solved by a first-order primal-dual saddle-point
//! scheme.
//!
//! Two estimators are provided. The two-phase refinement (`m1`) first
//! computes a quadratic-regularization flow, then refines it under a
//! total-variation prior with an image-weighted divergence penalty — a
//! good fit for fluid-like motion. The single-phase estimator (`m2`)
//! couples the data term directly with a total-variation prior and an
//! anisotropically weighted curl penalty, aimed at accurate rotation and
//! angular structure. Both run inside a coarse-to-fine warping pipeline
//! with bicubic interpolation and median filtering.
//!
//! Start with [`solver::run_pyramidal`] for end-to-end estimation, or
//! the runnable demos under `examples/`.

pub mod cli;
mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod ops;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{FlowField, PixelMask, PyramidParams, ScalarGrid};
pub use ops::{DualState, Model, VectorField, WeightGrid};
pub use solver::{PyramidOutcome, SolveOutcome, SolverParams, SolverState};
