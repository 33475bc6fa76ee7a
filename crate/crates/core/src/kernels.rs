//! Pairwise resonant dipole-dipole kernels.
//!
//! For two emitters separated by `r` with dimensionless separation
//! `xi = |k_p| r` and dipole projection `u = d.r_hat`:
//!
//! ```text
//! F(xi) = (3G/2) { (1-u^2) sin(xi)/xi + (1-3u^2) (cos(xi)/xi^2 - sin(xi)/xi^3) }
//! G(xi) = (3G/4) { -(1-u^2) cos(xi)/xi + (1-3u^2) (sin(xi)/xi^2 + cos(xi)/xi^3) }
//! K     = (F + 2iG) exp(-i k_p.r) / 2
//! ```
//!
//! `F` is the cooperative decay rate and `G` the cooperative frequency shift.
//! Outputs carry the units of the reference rate passed in (`gamma`).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Below this `xi` the decay kernel returns its exact limit `gamma`.
pub const F_LIMIT_XI: f64 = 1e-4;

/// Default lower bound on `xi` for the shift kernel, which diverges as `xi^-3`.
pub const DEFAULT_G_CUTOFF: f64 = 1e-3;

// Below this `xi` the 1/xi^2, 1/xi^3 terms of F are summed as a Taylor series.
const F_SERIES_XI: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelInput {
    /// Dimensionless separation `|k_p| r`.
    pub xi: f64,
    /// Cosine between the dipole and the separation vector.
    pub u: f64,
    /// Reference rate (the single-atom total decay rate).
    pub gamma: f64,
}

impl KernelInput {
    pub fn new(xi: f64, u: f64, gamma: f64) -> Result<Self> {
        let input = Self { xi, u, gamma };
        input.validate()?;
        Ok(input)
    }

    fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return Err(Error::Domain(format!("xi must be >= 0, got {}", self.xi)));
        }
        if !(self.u.abs() <= 1.0) {
            return Err(Error::Domain(format!("|u| must be <= 1, got {}", self.u)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Coupling between an ordered pair of atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCoupling {
    pub value: Complex64,
    /// `r_alpha - r_beta`.
    pub separation: Vec3,
    /// `exp(-i k_p.(r_alpha - r_beta))`.
    pub phase: Complex64,
}

/// `cos(xi)/xi^2 - sin(xi)/xi^3`, stable as `xi -> 0`.
fn near_field_f(xi: f64) -> f64 {
    if xi < F_SERIES_XI {
        let x2 = xi * xi;
        // sum_n (-1)^n 2n xi^(2n-2) / (2n+1)!
        -1.0 / 3.0 + x2 / 30.0 - x2 * x2 / 840.0 + x2 * x2 * x2 / 45_360.0 - x2 * x2 * x2 * x2 / 3_991_680.0
    } else {
        let (s, c) = xi.sin_cos();
        c / (xi * xi) - s / (xi * xi * xi)
    }
}

fn sinc(xi: f64) -> f64 {
    if xi < F_SERIES_XI {
        let x2 = xi * xi;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0 - x2 * x2 * x2 / 5040.0
    } else {
        xi.sin() / xi
    }
}

/// Cooperative decay rate `F`.
pub fn kernel_f(input: KernelInput) -> Result<f64> {
    input.validate()?;
    let KernelInput { xi, u, gamma } = input;
    if xi < F_LIMIT_XI {
        return Ok(gamma);
    }
    let u2 = u * u;
    Ok(1.5 * gamma * ((1.0 - u2) * sinc(xi) + (1.0 - 3.0 * u2) * near_field_f(xi)))
}

/// Cooperative frequency shift `G` with the default near-field cutoff.
pub fn kernel_g(input: KernelInput) -> Result<f64> {
    kernel_g_with_cutoff(input, DEFAULT_G_CUTOFF)
}

/// Cooperative frequency shift `G`; refuses `xi < cutoff`.
pub fn kernel_g_with_cutoff(input: KernelInput, cutoff: f64) -> Result<f64> {
    input.validate()?;
    let KernelInput { xi, u, gamma } = input;
    if xi <= 0.0 {
        return Err(Error::Domain("G diverges at xi = 0".into()));
    }
    if xi < cutoff {
        return Err(Error::NearFieldDivergence { xi, cutoff });
    }
    let u2 = u * u;
    let (s, c) = xi.sin_cos();
    let x2 = xi * xi;
    Ok(0.75 * gamma * (-(1.0 - u2) * c / xi + (1.0 - 3.0 * u2) * (s / x2 + c / (x2 * xi))))
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn unit(a: &Vec3) -> Result<Vec3> {
    let n = norm(a);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(
            "direction vector must be nonzero and finite".into(),
        ));
    }
    Ok([a[0] / n, a[1] / n, a[2] / n])
}

/// Pair coupling `K_ab` between atoms at `r_alpha` and `r_beta`.
///
/// `k_p` is the probe wave vector (inverse length, same length unit as the
/// positions) and `dipole` the dipole orientation (normalized internally).
pub fn pair_coupling(
    r_alpha: &Vec3,
    r_beta: &Vec3,
    k_p: &Vec3,
    dipole: &Vec3,
    gamma: f64,
) -> Result<PairCoupling> {
    pair_coupling_with_cutoff(r_alpha, r_beta, k_p, dipole, gamma, DEFAULT_G_CUTOFF)
}

pub fn pair_coupling_with_cutoff(
    r_alpha: &Vec3,
    r_beta: &Vec3,
    k_p: &Vec3,
    dipole: &Vec3,
    gamma: f64,
    cutoff: f64,
) -> Result<PairCoupling> {
    let d_hat = unit(dipole)?;
    let separation = sub(r_alpha, r_beta);
    let r = norm(&separation);
    if r == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    let u = (dot(&d_hat, &separation) / r).clamp(-1.0, 1.0);
    let input = KernelInput::new(norm(k_p) * r, u, gamma)?;
    let f = kernel_f(input)?;
    let g = kernel_g_with_cutoff(input, cutoff)?;
    let phase = Complex64::from_polar(1.0, -dot(k_p, &separation));
    Ok(PairCoupling {
        value: Complex64::new(f, 2.0 * g) * phase * 0.5,
        separation,
        phase,
    })
}

/// Far-field form `(3G/2) (-i e^{i xi}) / xi * e^{-i phase_arg}`.
///
/// This is the `1/xi` asymptote of `F + 2iG` at `u = 0`, i.e. of `2K` before
/// the propagation phase.
pub fn pair_coupling_farfield(xi: f64, phase_arg: f64, gamma: f64) -> Result<Complex64> {
    if !(xi > 0.0) {
        return Err(Error::Domain(format!("far-field kernel needs xi > 0, got {xi}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be > 0, got {gamma}")));
    }
    let minus_i = Complex64::new(0.0, -1.0);
    Ok(1.5 * gamma * minus_i * Complex64::from_polar(1.0, xi - phase_arg) / xi)
}
