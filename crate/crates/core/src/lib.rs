//! Spectral simulation and verification toolkit for the two-dimensional
//! nonlinear Schrödinger equation with multiplicative spatial white noise.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: periodic grid, FFTs, real and complex fields.
//! * [`noise`]: white noise, mollification, truncated Green's function and
//!   the Wick-renormalized bundle of noise objects.
//! * [`besov`]: Littlewood-Paley blocks and weighted Besov, Sobolev and
//!   Hölder norms.
//! * [`solver`]: Strang split-step integration and the `u <-> v` transform.
//! * [`diagnostics`]: conserved quantities, scaling studies, inequality checks.
//! * [`cli`]: TOML run configurations and the batch commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod besov;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod noise;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Axis, ComplexField, Grid2D, GridField, RealField};
pub use noise::{build_bundle, build_greens_kernel, sample_white_noise, NoiseBundle};
pub use solver::{evolve, ModelParams, Trajectory};
