//! Cooperative dipole-dipole effects in EIT spectra of cold Gaussian clouds.
//!
//! Rates are in units of the probe-transition decay `gamma31` unless noted,
//! lengths in meters.

// `!(x > 0.0)` is deliberate throughout: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupled;
pub mod eit;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod quadrature;
pub mod rates;

pub use error::{Error, Result};

pub type Vec3 = [f64; 3];
