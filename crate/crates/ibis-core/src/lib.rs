//! Two-dimensional immersed-boundary fluid–structure interaction on a
//! periodic grid, with optional lubrication corrections for thin gaps
//! between nearly touching surfaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] — periodic Eulerian grid and the centered difference
//!   operators (gradient, divergence, Laplacian);
//! * [`kernels`] — the regularised 4-point delta kernel and the
//!   spread/interpolate transfer operators;
//! * [`elliptic`] — geometric multigrid solvers for the corner-pressure
//!   Poisson problem and the cell-centered Helmholtz (implicit viscosity)
//!   problem;
//! * [`boundary`] — Lagrangian boundaries and their force models (tethers,
//!   elastic rings);
//! * [`geometry`] — cubic fits along boundaries, closest-point/height
//!   queries between paired surfaces, and the spatial binning that keeps
//!   pairing O(N);
//! * [`lubrication`] — the thin-gap velocity corrections;
//! * [`stepper`] — the predictor–corrector time integrator for unsteady
//!   Stokes flow coupled to the boundaries;
//! * [`scenarios`] — ready-made benchmark problems with exact or
//!   semi-analytic references;
//! * [`io`] / [`diagnostics`] — plain-text dump formats, checkpointing and
//!   error tables.

pub mod boundary;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod lubrication;
pub mod scenarios;
pub mod stepper;
pub(crate) mod textio;
pub mod vec2;

pub use error::{IbisError, Result};
pub use vec2::{Mat2, Vec2};
