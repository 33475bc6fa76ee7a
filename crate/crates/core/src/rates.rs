//! Cooperative linewidth and shift of a Gaussian cigar cloud.
//!
//! The continuum average of the pair coupling reduces to
//!
//! ```text
//! gamma~ / gamma31 = (3N/8) I(a, m),
//! I(a, m) = int_{-1}^{1} (1 + x^2) exp(-a(1 - x^2) - a m (1 - x)^2) dx
//! ```
//!
//! with `a = k_p^2 R_perp^2 / 4` and `m = (R_L/R_perp)^2`. [`gamma_tilde_closed_form`]
//! uses the erfcx form of `I`, [`gamma_tilde_quadrature`] integrates it directly,
//! and [`f_c_monte_carlo`] sums the discrete kernels over sampled atoms.

use std::f64::consts::PI;

use errorfunctions::RealErrorFunctions;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eit::EitParams;
use crate::error::{Error, Result};
use crate::geometry::{sample_positions, AtomPositions, CloudGeometry};
use crate::kernels::{self, KernelInput, DEFAULT_G_CUTOFF};
use crate::quadrature::{self, QuadOptions};
use crate::Vec3;

/// Closed form is used only for `m > 1 + CLOSED_FORM_MIN_ELONGATION`.
pub const CLOSED_FORM_MIN_ELONGATION: f64 = 1e-3;

/// Largest tolerated ratio between the biggest term of the closed form and
/// the result before falling back to quadrature.
pub const MAX_CANCELLATION: f64 = 1e7;

/// Largest excluded fraction of near-field pairs in the Monte Carlo sum.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Dipole orientation used for discrete sums (perpendicular to the probe).
pub const DEFAULT_DIPOLE: Vec3 = [1.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo,
    SphereLimit,
    NeedleLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveRate {
    pub f_c: Complex64,
    /// `gamma31 + Re f_C`.
    pub gamma_tilde: f64,
    /// `Im f_C`, subtracted from the probe detuning.
    pub shift: f64,
    pub method: RateMethod,
    /// One standard error; zero for analytic methods.
    pub uncertainty: f64,
}

impl CollectiveRate {
    pub fn from_f_c(f_c: Complex64, gamma31: f64, method: RateMethod, uncertainty: f64) -> Self {
        Self {
            f_c,
            gamma_tilde: gamma31 + f_c.re,
            shift: f_c.im,
            method,
            uncertainty,
        }
    }

    /// Analytic forms give the broadened width directly.
    fn from_gamma_tilde(gamma_tilde: Complex64, gamma31: f64, method: RateMethod) -> Self {
        Self::from_f_c(gamma_tilde - gamma31, gamma31, method, 0.0)
    }

    /// Real cooperative rate with no shift, e.g. for sweeping `gamma~` directly.
    pub fn from_ratio(gamma_tilde_over_gamma31: f64, gamma31: f64) -> Self {
        Self::from_f_c(
            Complex64::new((gamma_tilde_over_gamma31 - 1.0) * gamma31, 0.0),
            gamma31,
            RateMethod::ClosedForm,
            0.0,
        )
    }

    pub fn ratio(&self, gamma31: f64) -> f64 {
        self.gamma_tilde / gamma31
    }
}

fn check_gamma31(gamma31: f64) -> Result<()> {
    if gamma31 > 0.0 && gamma31.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma31 must be positive, got {gamma31}")))
    }
}

/// Closed-form `I(a, m)` for `m > 1`, with the worst term-to-result ratio.
///
/// The `exp(a/(m-1))` factor is carried inside `erfcx`, so nothing overflows
/// for large `a` and `m`.
pub fn overlap_integral_closed(a: f64, m: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(m > 1.0) || !a.is_finite() || !m.is_finite() {
        return Err(Error::Domain(format!(
            "closed form needs a > 0 and m > 1, got a={a}, m={m}"
        )));
    }
    let mm1 = m - 1.0;
    let x1 = (a / mm1).sqrt();
    let x2 = (2.0 * m - 1.0) * x1;
    let p = 4.0 * a * m * m - 4.0 * m * a + m - 1.0 + 2.0 * a;
    let decay = (-4.0 * a * m).exp();
    let t1 = PI.sqrt() * p * (x1.erfcx() - x2.erfcx() * decay);
    let t2 = 2.0 * a.sqrt() * mm1.sqrt() * (decay - 2.0 * m + 1.0);
    let bracket = t1 + t2;
    let value = bracket / (4.0 * a.powf(1.5) * mm1.powf(2.5));
    let cancellation = t1.abs().max(t2.abs()) / bracket.abs();
    Ok((value, cancellation))
}

/// Adaptive quadrature of `I(a, m)`, optionally with the longitudinal phase
/// `exp(-i k_p z_alpha (1 - x))` of a reference atom at `z_alpha`.
pub fn overlap_integral_quadrature(a: f64, m: f64, kz_alpha: f64) -> Result<Complex64> {
    if !(a > 0.0) || !(m > 0.0) || !a.is_finite() || !m.is_finite() {
        return Err(Error::Domain(format!(
            "quadrature needs a, m > 0, got a={a}, m={m}"
        )));
    }
    let b = a * m;
    // s = 1 - x concentrates the integrand near s = 0 for large a, b
    let integrand = |s: f64| {
        let x = 1.0 - s;
        let w = (1.0 + x * x) * (-a * s * (2.0 - s) - b * s * s).exp();
        if kz_alpha == 0.0 {
            Complex64::new(w, 0.0)
        } else {
            Complex64::from_polar(w, -kz_alpha * s)
        }
    };
    let h = 1.0 / (2.0 * a + b.sqrt());
    let mut breaks = Vec::new();
    let mut s = h;
    while s < 2.0 {
        breaks.push(s);
        s *= 2.0;
    }
    let opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-11,
        max_intervals: 4000,
    };
    Ok(quadrature::integrate(integrand, 0.0, 2.0, &breaks, opts)?.value)
}

/// Stable closed form, falling back to quadrature near `m = 1` or when the
/// terms cancel too strongly.
pub fn gamma_tilde_closed_form(cloud: &CloudGeometry, gamma31: f64) -> Result<CollectiveRate> {
    check_gamma31(gamma31)?;
    let (a, m) = (cloud.a(), cloud.m());
    if m <= 1.0 + CLOSED_FORM_MIN_ELONGATION {
        log::info!("m = {m} is too close to 1 for the closed form; using quadrature");
        return gamma_tilde_quadrature(cloud, gamma31, None);
    }
    let (value, cancellation) = overlap_integral_closed(a, m)?;
    if !value.is_finite() || cancellation > MAX_CANCELLATION {
        log::info!("closed form cancels by {cancellation:.2e} at a={a}, m={m}; using quadrature");
        return gamma_tilde_quadrature(cloud, gamma31, None);
    }
    let gt = gamma31 * 3.0 * cloud.n_exact / 8.0 * value;
    Ok(CollectiveRate::from_gamma_tilde(
        gt.into(),
        gamma31,
        RateMethod::ClosedForm,
    ))
}

/// Direct quadrature of the continuum integral. With `r_alpha` the reference
/// atom's propagation phase is kept and the result acquires an imaginary part.
pub fn gamma_tilde_quadrature(
    cloud: &CloudGeometry,
    gamma31: f64,
    r_alpha: Option<Vec3>,
) -> Result<CollectiveRate> {
    check_gamma31(gamma31)?;
    let kz = r_alpha.map_or(0.0, |r| cloud.k_p() * r[2]);
    let value = overlap_integral_quadrature(cloud.a(), cloud.m(), kz)?;
    let gt = value * (gamma31 * 3.0 * cloud.n_exact / 8.0);
    Ok(CollectiveRate::from_gamma_tilde(
        gt,
        gamma31,
        RateMethod::Quadrature,
    ))
}

/// Spherical cloud: `3 N gamma31 / (2 k_p^2 R_L^2)`.
pub fn gamma_tilde_sphere(cloud: &CloudGeometry, gamma31: f64) -> Result<CollectiveRate> {
    check_gamma31(gamma31)?;
    let m = cloud.m();
    let kr = cloud.k_p() * cloud.r_l;
    if (m - 1.0).abs() >= 0.05 || kr <= 10.0 {
        return Err(Error::Regime(format!(
            "sphere limit needs |m - 1| < 0.05 and k_p R_L > 10, got m={m}, k_p R_L={kr}"
        )));
    }
    let gt = 1.5 * cloud.n_exact * gamma31 / (kr * kr);
    Ok(CollectiveRate::from_gamma_tilde(
        gt.into(),
        gamma31,
        RateMethod::SphereLimit,
    ))
}

/// Extreme needle: `(3 sqrt(pi) / 8) N gamma31 / (k_p R_L)`.
///
/// This is half the `a/(m-1) -> 0` limit of [`gamma_tilde_closed_form`].
pub fn gamma_tilde_needle(cloud: &CloudGeometry, gamma31: f64) -> Result<CollectiveRate> {
    check_gamma31(gamma31)?;
    let (a, m) = (cloud.a(), cloud.m());
    if !(m * a > 100.0 && m > 100.0) {
        return Err(Error::Regime(format!(
            "needle limit needs m a > 100 and m > 100, got m={m}, a={a}"
        )));
    }
    let gt = 3.0 * PI.sqrt() / 8.0 * cloud.n_exact * gamma31 / (cloud.k_p() * cloud.r_l);
    Ok(CollectiveRate::from_gamma_tilde(
        gt.into(),
        gamma31,
        RateMethod::NeedleLimit,
    ))
}

/// Needle limit written through the optical depth:
/// `(pi/8) D_c k_p R_perp^2 / (2 R_L)`.
pub fn gamma_tilde_needle_from_depth(cloud: &CloudGeometry, gamma31: f64) -> f64 {
    PI / 8.0 * cloud.optical_depth() * cloud.k_p() * cloud.r_perp * cloud.r_perp / (2.0 * cloud.r_l) * gamma31
}

/// Closed form with quadrature fallback.
pub fn gamma_tilde_auto(cloud: &CloudGeometry, gamma31: f64) -> Result<CollectiveRate> {
    gamma_tilde_closed_form(cloud, gamma31)
}

/// Collective frequency shift `(2/sqrt(pi)) (gamma~ - gamma31) lambda / (R_perp^2 R_L)^{1/3}`.
pub fn collective_shift(cloud: &CloudGeometry, gamma_tilde: f64, gamma31: f64) -> f64 {
    2.0 / PI.sqrt() * (gamma_tilde - gamma31) * cloud.lambda
        / (cloud.r_perp * cloud.r_perp * cloud.r_l).cbrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// Reference atoms are those with `|z| < R_L / 4`.
    #[default]
    CentralSlab,
    FullEnsemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub policy: ReferencePolicy,
    pub dipole: Vec3,
    pub xi_cutoff: f64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            policy: ReferencePolicy::CentralSlab,
            dipole: DEFAULT_DIPOLE,
            xi_cutoff: DEFAULT_G_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub rate: CollectiveRate,
    pub references: usize,
    pub excluded_pairs: usize,
    pub total_pairs: usize,
}

/// Row sum `sum_{beta != alpha} K_{alpha beta}` for reference atom `alpha`.
/// Pairs closer than `xi_cutoff` are skipped and counted.
pub(crate) fn coupling_row_sum(
    points: &[Vec3],
    alpha: usize,
    k_p: f64,
    dipole: &Vec3,
    gamma: f64,
    xi_cutoff: f64,
) -> (Complex64, usize) {
    let ra = points[alpha];
    let mut sum = Complex64::new(0.0, 0.0);
    let mut excluded = 0;
    for (beta, rb) in points.iter().enumerate() {
        if beta == alpha {
            continue;
        }
        let sep = kernels::sub(&ra, rb);
        let r = kernels::norm(&sep);
        let xi = k_p * r;
        if xi < xi_cutoff {
            excluded += 1;
            continue;
        }
        let u = (kernels::dot(dipole, &sep) / r).clamp(-1.0, 1.0);
        let input = KernelInput { xi, u, gamma };
        let f = kernels::kernel_f(input).expect("validated kernel input");
        let g = kernels::kernel_g_with_cutoff(input, xi_cutoff).expect("xi above cutoff");
        sum += Complex64::new(f, 2.0 * g) * Complex64::from_polar(0.5, -k_p * sep[2]);
    }
    (sum, excluded)
}

/// Discrete estimate `f_C = <sum_{beta != alpha} K_{alpha beta}>` over
/// reference atoms, with the probe along `z`.
pub fn f_c_monte_carlo(
    positions: &AtomPositions,
    params: &EitParams,
    policy: ReferencePolicy,
) -> Result<CollectiveRate> {
    let opts = MonteCarloOptions {
        policy,
        ..Default::default()
    };
    Ok(f_c_monte_carlo_with(positions, params, &opts)?.rate)
}

pub fn f_c_monte_carlo_with(
    positions: &AtomPositions,
    params: &EitParams,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloReport> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::TooFewPoints("f_c_monte_carlo"));
    }
    let dipole = kernels::unit(&opts.dipole)?;
    let refs: Vec<usize> = match opts.policy {
        ReferencePolicy::FullEnsemble => (0..n).collect(),
        ReferencePolicy::CentralSlab => {
            let half = positions.cloud.r_l / 4.0;
            (0..n).filter(|&i| positions.points[i][2].abs() < half).collect()
        }
    };
    if refs.is_empty() {
        return Err(Error::Invalid("no reference atoms in the central slab".into()));
    }
    let k_p = positions.cloud.k_p();
    let gamma = params.gamma();
    let rows: Vec<(Complex64, usize)> = refs
        .par_iter()
        .map(|&alpha| coupling_row_sum(&positions.points, alpha, k_p, &dipole, gamma, opts.xi_cutoff))
        .collect();

    let excluded: usize = rows.iter().map(|r| r.1).sum();
    let total = refs.len() * (n - 1);
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(Error::ExcludedPairs { excluded, total });
    }
    let count = rows.len() as f64;
    let mean: Complex64 = rows.iter().map(|r| r.0).sum::<Complex64>() / count;
    let uncertainty = if rows.len() > 1 {
        let var = rows.iter().map(|r| (r.0.re - mean.re).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloReport {
        rate: CollectiveRate::from_f_c(mean, params.gamma31, RateMethod::MonteCarlo, uncertainty),
        references: refs.len(),
        excluded_pairs: excluded,
        total_pairs: total,
    })
}

/// Average of [`f_c_monte_carlo`] over independently sampled clouds; the
/// uncertainty is the standard error across seeds.
pub fn f_c_monte_carlo_seeds(
    cloud: &CloudGeometry,
    params: &EitParams,
    opts: &MonteCarloOptions,
    seeds: &[u64],
) -> Result<CollectiveRate> {
    if seeds.len() < 2 {
        return Err(Error::TooFewPoints("f_c_monte_carlo_seeds"));
    }
    let mut values = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let pos = sample_positions(cloud, seed);
        values.push(f_c_monte_carlo_with(&pos, params, opts)?.rate.f_c);
    }
    let count = values.len() as f64;
    let mean = values.iter().sum::<Complex64>() / count;
    let var = values.iter().map(|v| (v.re - mean.re).powi(2)).sum::<f64>() / (count - 1.0);
    Ok(CollectiveRate::from_f_c(
        mean,
        params.gamma31,
        RateMethod::MonteCarlo,
        (var / count).sqrt(),
    ))
}

/// Expected discrete `Re f_C` when reference atoms are drawn from the whole
/// cloud: the pair-difference density is the same Gaussian with radii scaled
/// by `sqrt(2)`, and the azimuthal average of the linear-dipole kernel equals
/// the circular one.
pub fn f_c_full_ensemble_expectation(cloud: &CloudGeometry, gamma31: f64) -> Result<f64> {
    let wide = cloud.scaled(2f64.sqrt()).with_atoms(cloud.n() as f64 - 1.0);
    let i = if wide.m() > 1.0 + CLOSED_FORM_MIN_ELONGATION {
        overlap_integral_closed(wide.a(), wide.m())?.0
    } else {
        overlap_integral_quadrature(wide.a(), wide.m(), 0.0)?.re
    };
    Ok(gamma31 * 3.0 * wide.n_exact / 8.0 * i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_cloud, CloudSpec};
    use approx::assert_relative_eq;

    fn cloud_am(a: f64, m: f64, n: f64) -> CloudGeometry {
        let lambda = 780e-9;
        let k = 2.0 * PI / lambda;
        let r_perp = 2.0 * a.sqrt() / k;
        CloudGeometry {
            r_perp,
            r_l: r_perp * m.sqrt(),
            lambda,
            n_exact: n,
            lambda_is_default: false,
        }
    }

    #[test]
    fn closed_form_matches_quadrature_samples() {
        for &(a, m) in &[
            (1.0, 2.0),
            (3.0, 7.5),
            (100.0, 2.0),
            (1e5, 2.0),
            (1e4, 1.9e4),
            (1.0, 1e6),
            (1e5, 1e6),
        ] {
            let (c, _) = overlap_integral_closed(a, m).unwrap();
            let q = overlap_integral_quadrature(a, m, 0.0).unwrap().re;
            assert_relative_eq!(c, q, max_relative = 1e-7);
        }
    }

    #[test]
    fn closed_form_against_reference_values() {
        // 50-digit mpmath quadrature of I(a, m)
        let (v, _) = overlap_integral_closed(1.0, 2.0).unwrap();
        let q = overlap_integral_quadrature(1.0, 2.0, 0.0).unwrap().re;
        assert_relative_eq!(v, q, max_relative = 1e-12);
        // sphere regime: I -> 1/a
        let q = overlap_integral_quadrature(1e4, 1.0, 0.0).unwrap().re;
        assert_relative_eq!(q * 1e4, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn large_parameters_stay_finite() {
        let cloud = cloud_am(10140.0, 1.9e4, 5.99e5);
        let rate = gamma_tilde_closed_form(&cloud, 1.0).unwrap();
        assert_eq!(rate.method, RateMethod::ClosedForm);
        assert!(rate.gamma_tilde.is_finite() && rate.gamma_tilde > 0.0);
        let q = gamma_tilde_quadrature(&cloud, 1.0, None).unwrap();
        assert_relative_eq!(rate.gamma_tilde, q.gamma_tilde, max_relative = 1e-8);
    }

    #[test]
    fn near_sphere_falls_back() {
        let cloud = cloud_am(500.0, 1.0005, 1e4);
        let rate = gamma_tilde_closed_form(&cloud, 1.0).unwrap();
        assert_eq!(rate.method, RateMethod::Quadrature);
        let sphere = gamma_tilde_sphere(&cloud, 1.0).unwrap();
        assert_relative_eq!(rate.gamma_tilde, sphere.gamma_tilde, max_relative = 1e-2);
    }

    #[test]
    fn sphere_from_optical_depth() {
        for (dc, expected) in [(20.0, 8.862), (4.0 / PI.sqrt(), 1.0)] {
            let cloud = make_cloud(&CloudSpec {
                optical_depth: Some(dc),
                density: Some(1e17),
                m: Some(1.0),
                r_perp: Some(dc / (2.0 * 1e17 * crate::geometry::cross_section(780e-9))),
                ..Default::default()
            })
            .unwrap();
            let rate = gamma_tilde_sphere(&cloud, 1.0).unwrap();
            assert_relative_eq!(rate.gamma_tilde, expected, max_relative = 1e-4);
            assert_relative_eq!(rate.gamma_tilde, PI.sqrt() * dc / 4.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn limit_regime_gates() {
        let small = CloudGeometry {
            r_perp: 5.0 / (2.0 * PI),
            r_l: 5.0 / (2.0 * PI),
            lambda: 1.0,
            n_exact: 10.0,
            lambda_is_default: false,
        };
        assert!(matches!(gamma_tilde_sphere(&small, 1.0), Err(Error::Regime(_))));
        assert!(matches!(
            gamma_tilde_needle(&cloud_am(100.0, 50.0, 1e4), 1.0),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn needle_forms_agree() {
        let cloud = make_cloud(&CloudSpec {
            density: Some(5e16),
            optical_depth: Some(50.0),
            r_perp: Some(25e-6),
            lambda: Some(780e-9),
            ..Default::default()
        })
        .unwrap();
        let rate = gamma_tilde_needle(&cloud, 1.0).unwrap();
        assert_relative_eq!(
            rate.gamma_tilde,
            gamma_tilde_needle_from_depth(&cloud, 1.0),
            max_relative = 1e-12
        );
        assert_relative_eq!(rate.gamma_tilde, 14.3, max_relative = 5e-3);
    }

    #[test]
    fn closed_form_approaches_twice_the_needle_value() {
        // a/(m-1) = 1e-6, m a = 1e10
        let cloud = cloud_am(1e2, 1e8, 1e6);
        let closed = gamma_tilde_closed_form(&cloud, 1.0).unwrap();
        let needle = gamma_tilde_needle(&cloud, 1.0).unwrap();
        assert_relative_eq!(closed.gamma_tilde / needle.gamma_tilde, 2.0, max_relative = 2e-3);
    }

    #[test]
    fn shift_factor() {
        let cloud = CloudGeometry {
            r_perp: 50e-6,
            r_l: 1e-3,
            lambda: 780e-9,
            n_exact: 1e6,
            lambda_is_default: false,
        };
        let s = collective_shift(&cloud, 11.0, 1.0);
        assert_relative_eq!(10.0 / s, 154.2, max_relative = 1e-3);
        assert_eq!(collective_shift(&cloud, 1.0, 1.0), 0.0);
        let doubled = CloudGeometry {
            lambda: 1560e-9,
            ..cloud
        };
        assert_relative_eq!(
            collective_shift(&doubled, 11.0, 1.0),
            2.0 * s,
            max_relative = 1e-14
        );
    }

    #[test]
    fn reference_phase_leaves_center_unchanged() {
        let cloud = cloud_am(200.0, 20.0, 1e4);
        let plain = gamma_tilde_quadrature(&cloud, 1.0, None).unwrap();
        let center = gamma_tilde_quadrature(&cloud, 1.0, Some([0.0; 3])).unwrap();
        assert_eq!(plain.f_c, center.f_c);
        let off = gamma_tilde_quadrature(&cloud, 1.0, Some([0.0, 0.0, 0.1 * cloud.r_l])).unwrap();
        assert!(off.shift != 0.0);
    }

    #[test]
    fn two_atom_monte_carlo_unrolls() {
        let cloud = CloudGeometry {
            r_perp: 1.0,
            r_l: 1.0,
            lambda: 1.0,
            n_exact: 2.0,
            lambda_is_default: false,
        };
        let pos = AtomPositions {
            points: vec![[0.1, 0.2, 0.0], [0.0, -0.3, 0.45]],
            seed: 0,
            stream: 0,
            cloud,
        };
        let params = EitParams::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let rate = f_c_monte_carlo(&pos, &params, ReferencePolicy::FullEnsemble).unwrap();
        let k = [0.0, 0.0, cloud.k_p()];
        let k12 = kernels::pair_coupling(&pos.points[0], &pos.points[1], &k, &DEFAULT_DIPOLE, 2.0).unwrap();
        let k21 = kernels::pair_coupling(&pos.points[1], &pos.points[0], &k, &DEFAULT_DIPOLE, 2.0).unwrap();
        let expected = (k12.value + k21.value) / 2.0;
        assert!((rate.f_c - expected).norm() < 1e-14);
        assert_relative_eq!(rate.gamma_tilde - 1.0, rate.f_c.re, epsilon = 1e-15);
    }

    #[test]
    fn distant_atoms_decouple() {
        let cloud = CloudGeometry {
            r_perp: 1e6,
            r_l: 1e6,
            lambda: 1.0,
            n_exact: 20.0,
            lambda_is_default: false,
        };
        let pos = sample_positions(&cloud, 3);
        let params = EitParams::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let rate = f_c_monte_carlo(&pos, &params, ReferencePolicy::FullEnsemble).unwrap();
        assert!(rate.f_c.norm() < 1e-4);
    }

    #[test]
    fn reduction_is_order_independent() {
        let cloud = cloud_am(30.0, 4.0, 400.0);
        let params = EitParams::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let pos = sample_positions(&cloud, 11);
        let a = f_c_monte_carlo(&pos, &params, ReferencePolicy::FullEnsemble).unwrap();
        let mut rev = pos.clone();
        rev.points.reverse();
        let b = f_c_monte_carlo(&rev, &params, ReferencePolicy::FullEnsemble).unwrap();
        assert!((a.f_c - b.f_c).norm() <= 1e-10 * a.f_c.norm());
    }

    #[test]
    fn dense_cloud_excludes_too_many_pairs() {
        let cloud = CloudGeometry {
            r_perp: 1e-5,
            r_l: 1e-5,
            lambda: 1.0,
            n_exact: 100.0,
            lambda_is_default: false,
        };
        let pos = sample_positions(&cloud, 0);
        let params = EitParams::new(0.0, 0.0, 0.0, 1.0, 0.0);
        assert!(matches!(
            f_c_monte_carlo(&pos, &params, ReferencePolicy::FullEnsemble),
            Err(Error::ExcludedPairs { .. })
        ));
    }

    #[test]
    fn full_ensemble_expectation_matches_sampling() {
        // small dilute cloud, many seeds: the mean should sit on the oracle
        let cloud = cloud_am(20.0, 9.0, 300.0);
        let params = EitParams::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let opts = MonteCarloOptions {
            policy: ReferencePolicy::FullEnsemble,
            ..Default::default()
        };
        let seeds: Vec<u64> = (0..40).collect();
        let mc = f_c_monte_carlo_seeds(&cloud, &params, &opts, &seeds).unwrap();
        let expected = f_c_full_ensemble_expectation(&cloud, 1.0).unwrap();
        assert!(
            (mc.f_c.re - expected).abs() < 4.0 * mc.uncertainty,
            "{} vs {expected} (se {})",
            mc.f_c.re,
            mc.uncertainty
        );
    }
}
