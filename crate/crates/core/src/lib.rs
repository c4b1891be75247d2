//! Calibration pipeline for the constant sufficiency factor consumption
//! asset pricing model.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! - [`dataset`]: load and validate the annual series, derive growth pairs.
//! - [`moments`]: sample log-moments and the lognormality gap.
//! - [`model`]: the four residual equations in `(ln β, ln Ω, ln δ, τ)`, their
//!   analytic Jacobian, and the lognormal covariance identities.
//! - [`solver`]: damped least squares, rank diagnostics and the one-parameter
//!   solution curve in `τ`.
//! - [`classify`]: CRRA utility, certain vs uncertain utility, and the
//!   investor risk-attitude label.
//!
//! [`mc`] is a Monte Carlo oracle for the lognormal identities.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod dataset;
pub mod error;
pub mod mc;
pub mod model;
pub mod moments;
pub mod solver;

pub use error::{Result, SfmError};
