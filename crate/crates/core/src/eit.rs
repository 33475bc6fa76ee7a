//! Local-field EIT transmission with a cooperative rate `f_C`.
//!
//! ```text
//! A   = i delta_p - gamma31 - (i Omega_c^2 / 4) / (delta_2 + i gamma21)
//! T   = exp[(D Gamma / 2) Re(1 / (A - f_C))]
//! T_M = exp[(D Gamma / 2) Re(sum_{m<=M} f_C^m / A^{m+1})]
//! ```
//!
//! At the two-photon pole (`delta_2 = gamma21 = 0`, `Omega_c > 0`) `A` diverges
//! and every transmission evaluates to its limit, 1.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::CollectiveRate;

/// Points with `|f_C| / |A|` above this are flagged in spectra.
pub const VALIDITY_THRESHOLD: f64 = 0.5;

pub const DEFAULT_GRID_POINTS: usize = 2001;

/// Flank crossings are refined to this detuning resolution (units of gamma31).
pub const FWHM_RESOLUTION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EitParams {
    pub omega_c: f64,
    pub delta_p: f64,
    pub delta_c: f64,
    pub gamma31: f64,
    pub gamma21: f64,
}

impl EitParams {
    pub fn new(omega_c: f64, delta_p: f64, delta_c: f64, gamma31: f64, gamma21: f64) -> Self {
        Self {
            omega_c,
            delta_p,
            delta_c,
            gamma31,
            gamma21,
        }
    }

    /// Total decay rate `Gamma = 2 gamma31`.
    pub fn gamma(&self) -> f64 {
        2.0 * self.gamma31
    }

    /// Two-photon detuning `delta_p - delta_c`.
    pub fn delta_2(&self) -> f64 {
        self.delta_p - self.delta_c
    }

    pub fn with_delta_p(&self, delta_p: f64) -> Self {
        Self { delta_p, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.omega_c,
            self.delta_p,
            self.delta_c,
            self.gamma31,
            self.gamma21,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Invalid("EIT parameters must be finite".into()));
        }
        if !(self.gamma31 > 0.0) {
            return Err(Error::Invalid(format!(
                "gamma31 must be > 0, got {}",
                self.gamma31
            )));
        }
        if self.gamma21 < 0.0 || self.omega_c < 0.0 {
            return Err(Error::Invalid("gamma21 and Omega_c must be >= 0".into()));
        }
        Ok(())
    }

    fn is_pole(&self) -> bool {
        self.delta_2() == 0.0 && self.gamma21 == 0.0 && self.omega_c > 0.0
    }
}

pub fn denominator_a(params: &EitParams) -> Result<Complex64> {
    if params.is_pole() {
        return Err(Error::Pole);
    }
    let i = Complex64::i();
    let bare = i * params.delta_p - params.gamma31;
    if params.omega_c == 0.0 {
        return Ok(bare);
    }
    let ground = Complex64::new(params.delta_2(), params.gamma21);
    Ok(bare - i * (params.omega_c * params.omega_c / 4.0) / ground)
}

fn check_depth(d: f64) -> Result<()> {
    if d >= 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("optical depth must be >= 0, got {d}")))
    }
}

/// Complex log-amplitude `(D Gamma / 2) / (A - f_C)`; its real part is `ln T`.
pub fn log_amplitude_all_order(params: &EitParams, f_c: Complex64, d: f64) -> Result<Complex64> {
    check_depth(d)?;
    match denominator_a(params) {
        Ok(a) => Ok(d * params.gamma() / 2.0 / (a - f_c)),
        Err(Error::Pole) => Ok(Complex64::new(0.0, 0.0)),
        Err(e) => Err(e),
    }
}

/// Order-`M` truncation of [`log_amplitude_all_order`].
pub fn log_amplitude_order_m(params: &EitParams, f_c: Complex64, d: f64, order: u32) -> Result<Complex64> {
    check_depth(d)?;
    let a = match denominator_a(params) {
        Ok(a) => a,
        Err(Error::Pole) => return Ok(Complex64::new(0.0, 0.0)),
        Err(e) => return Err(e),
    };
    let inv_a = 1.0 / a;
    let z = f_c * inv_a;
    let mut term = inv_a;
    let mut sum = term;
    for _ in 0..order {
        term *= z;
        sum += term;
    }
    Ok(d * params.gamma() / 2.0 * sum)
}

pub fn transmission_all_order(params: &EitParams, f_c: Complex64, d: f64) -> Result<f64> {
    Ok(log_amplitude_all_order(params, f_c, d)?.re.exp())
}

pub fn transmission_order_m(params: &EitParams, f_c: Complex64, d: f64, order: u32) -> Result<f64> {
    Ok(log_amplitude_order_m(params, f_c, d, order)?.re.exp())
}

/// `(delta_p - Im f_C, gamma31 + Re f_C)`.
pub fn effective_rates(f_c: Complex64, params: &EitParams) -> (f64, f64) {
    (params.delta_p - f_c.im, params.gamma31 + f_c.re)
}

/// `|f_C| / |A|`; zero at the pole.
pub fn validity_ratio(params: &EitParams, f_c: Complex64) -> Result<f64> {
    match denominator_a(params) {
        Ok(a) => Ok(f_c.norm() / a.norm()),
        Err(Error::Pole) => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Finite(u32),
    All,
}

impl Order {
    pub fn log_amplitude(self, params: &EitParams, f_c: Complex64, d: f64) -> Result<Complex64> {
        match self {
            Order::Finite(m) => log_amplitude_order_m(params, f_c, d, m),
            Order::All => log_amplitude_all_order(params, f_c, d),
        }
    }

    pub fn transmission(self, params: &EitParams, f_c: Complex64, d: f64) -> Result<f64> {
        Ok(self.log_amplitude(params, f_c, d)?.re.exp())
    }

    pub fn label(self) -> String {
        match self {
            Order::Finite(m) => m.to_string(),
            Order::All => "inf".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    /// Template parameters; `delta_p` is replaced point by point.
    pub params: EitParams,
    pub rate: CollectiveRate,
    pub optical_depth: f64,
    pub order: Order,
    pub lambda: Option<f64>,
    pub lambda_is_default: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub detunings: Vec<f64>,
    pub transmission: Vec<f64>,
    pub validity: Vec<f64>,
    pub flagged: Vec<bool>,
    pub meta: SpectrumMeta,
}

/// `points` uniform detunings over `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Invalid(format!(
            "bad grid [{lo}, {hi}] with {points} points"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
        .collect())
}

/// 2001 points over `delta_p in [-2 Omega_c, 2 Omega_c]`.
pub fn default_grid(params: &EitParams) -> Result<Vec<f64>> {
    let half = 2.0 * params.omega_c.max(params.gamma31);
    uniform_grid(-half, half, DEFAULT_GRID_POINTS)
}

pub fn sweep_spectrum(
    params: &EitParams,
    rate: &CollectiveRate,
    d: f64,
    grid: &[f64],
    order: Order,
) -> Result<Spectrum> {
    params.validate()?;
    check_depth(d)?;
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid(
            "detuning grid must be non-empty and strictly increasing".into(),
        ));
    }
    let f_c = rate.f_c;
    let points: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&dp| {
            let p = params.with_delta_p(dp);
            Ok((order.transmission(&p, f_c, d)?, validity_ratio(&p, f_c)?))
        })
        .collect::<Result<_>>()?;
    let (transmission, validity): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let flagged = validity.iter().map(|&v| v > VALIDITY_THRESHOLD).collect();
    Ok(Spectrum {
        detunings: grid.to_vec(),
        transmission,
        validity,
        flagged,
        meta: SpectrumMeta {
            params: *params,
            rate: *rate,
            optical_depth: d,
            order,
            lambda: None,
            lambda_is_default: false,
        },
    })
}

impl Spectrum {
    fn eval(&self, delta_p: f64) -> Result<f64> {
        let m = &self.meta;
        m.order
            .transmission(&m.params.with_delta_p(delta_p), m.rate.f_c, m.optical_depth)
    }

    pub fn to_csv(&self) -> String {
        let g = self.meta.params.gamma31;
        let mut out = provenance_header(self.meta.lambda, self.meta.lambda_is_default);
        out.push_str("delta_p_over_gamma31,T,validity_ratio,flagged\n");
        for i in 0..self.detunings.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.detunings[i] / g,
                self.transmission[i],
                self.validity[i],
                self.flagged[i]
            );
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let g = self.meta.params.gamma31;
        serde_json::json!({
            "meta": self.meta,
            "delta_p_over_gamma31": self.detunings.iter().map(|d| d / g).collect::<Vec<_>>(),
            "T": self.transmission,
            "validity_ratio": self.validity,
            "flagged": self.flagged,
        })
    }
}

/// `#` comment lines recording the wavelength behind a file's numbers.
pub fn provenance_header(lambda: Option<f64>, is_default: bool) -> String {
    match lambda {
        Some(l) => format!("# lambda_m = {l:e}\n# lambda_is_default = {is_default}\n"),
        None => "# lambda_m = none (no geometry dependence)\n".into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwhmBaseline {
    /// Half of the peak transmission.
    #[default]
    HalfPeak,
    /// Midway between the peak and the higher of the two flanking minima.
    FlankFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fwhm {
    pub width: f64,
    pub left: f64,
    pub right: f64,
    pub level: f64,
    pub peak: f64,
    /// Larger of `|f_C|/|A|` at the two crossings.
    pub crossing_validity: f64,
}

pub fn fwhm_numeric(spectrum: &Spectrum) -> Result<f64> {
    Ok(fwhm_detail(spectrum, FwhmBaseline::default())?.width)
}

/// Transparency window width around two-photon resonance.
///
/// Crossings are located on the grid, interpolated linearly and then refined
/// by bisection on the spectrum's own model to [`FWHM_RESOLUTION`] gamma31.
pub fn fwhm_detail(spectrum: &Spectrum, baseline: FwhmBaseline) -> Result<Fwhm> {
    let x = &spectrum.detunings;
    let t = &spectrum.transmission;
    let n = x.len();
    if n < 3 {
        return Err(Error::NoWindow("spectrum has fewer than 3 points".into()));
    }
    let params = spectrum.meta.params;
    let center = params.delta_c;
    let start = x
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - center).abs().total_cmp(&(b.1 - center).abs()))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let mut ip = start;
    loop {
        if ip > 0 && t[ip - 1] > t[ip] {
            ip -= 1;
        } else if ip + 1 < n && t[ip + 1] > t[ip] {
            ip += 1;
        } else {
            break;
        }
    }
    let mut peak = t[ip];
    if x[0] < center && center < x[n - 1] {
        peak = peak.max(spectrum.eval(center)?);
    }
    let level = match baseline {
        FwhmBaseline::HalfPeak => peak / 2.0,
        FwhmBaseline::FlankFloor => {
            let left_min = t[..ip].iter().copied().fold(f64::INFINITY, f64::min);
            let right_min = t[ip + 1..].iter().copied().fold(f64::INFINITY, f64::min);
            0.5 * (peak + left_min.max(right_min))
        }
    };
    if !(level.is_finite() && level < peak) {
        return Err(Error::NoWindow("no absorption on one side of the peak".into()));
    }

    let left_idx = (0..ip).rev().find(|&i| t[i] < level);
    let right_idx = (ip + 1..n).find(|&i| t[i] < level);
    let (li, ri) = match (left_idx, right_idx) {
        (Some(l), Some(r)) => (l, r),
        _ => {
            return Err(Error::NoWindow(format!(
                "half-height level {level:.4} is not crossed on both sides of the peak"
            )))
        }
    };
    let left = refine_crossing(spectrum, x[li], x[li + 1], level)?;
    let right = refine_crossing(spectrum, x[ri], x[ri - 1], level)?;
    let f_c = spectrum.meta.rate.f_c;
    let crossing_validity = validity_ratio(&params.with_delta_p(left), f_c)?
        .max(validity_ratio(&params.with_delta_p(right), f_c)?);
    Ok(Fwhm {
        width: right - left,
        left,
        right,
        level,
        peak,
        crossing_validity,
    })
}

/// Bisection between `below` (T < level) and `above` (T >= level).
fn refine_crossing(spectrum: &Spectrum, mut below: f64, mut above: f64, level: f64) -> Result<f64> {
    let tol = FWHM_RESOLUTION * spectrum.meta.params.gamma31 * 1e-2;
    for _ in 0..200 {
        if (above - below).abs() <= tol {
            break;
        }
        let mid = 0.5 * (below + above);
        if spectrum.eval(mid)? < level {
            below = mid;
        } else {
            above = mid;
        }
    }
    Ok(0.5 * (below + above))
}

/// Large-`D_c` Gaussian width `sqrt(ln 2 / 2) Omega_c^2 / sqrt(D_c Gamma gamma~)`.
pub fn fwhm_gaussian_limit(params: &EitParams, d_c: f64, gamma_tilde: f64) -> f64 {
    if params.omega_c >= d_c.sqrt() * params.gamma() {
        log::warn!(
            "Gaussian width needs Omega_c << sqrt(D_c) Gamma (Omega_c = {}, sqrt(D_c) Gamma = {})",
            params.omega_c,
            d_c.sqrt() * params.gamma()
        );
    }
    (std::f64::consts::LN_2 / 2.0).sqrt() * params.omega_c * params.omega_c
        / (d_c * params.gamma() * gamma_tilde).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    /// `a` in `y = c x^{-a}`.
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln y` against `ln x`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLaw> {
    if xs.len() != ys.len() {
        return Err(Error::Invalid("power-law fit needs equal-length inputs".into()));
    }
    if xs.len() < 2 {
        return Err(Error::TooFewPoints("fit_power_law"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("power-law fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("power-law fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerLaw {
        exponent: -slope,
        prefactor: (my - slope * mx).exp(),
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub optical_depth: f64,
    /// `(gamma~/gamma31, FWHM/gamma31, crossing validity)` for every grid value
    /// that has a window.
    pub points: Vec<(f64, f64, f64)>,
    /// Subset of `points` entering the fit.
    pub used: Vec<(f64, f64)>,
    pub fit: PowerLaw,
}

/// Fit `FWHM ∝ gamma~^{-a}` over a set of `gamma~/gamma31` values, with `f_C`
/// real. Only windows whose crossings satisfy `|f_C|/|A| < 0.5` enter the fit,
/// since outside that region the local-field transmission is not trustworthy.
pub fn fwhm_scaling(
    params: &EitParams,
    d_c: f64,
    gamma_ratios: &[f64],
    baseline: FwhmBaseline,
) -> Result<ScalingFit> {
    let grid = default_grid(params)?;
    let g = params.gamma31;
    let mut points = Vec::new();
    for &ratio in gamma_ratios {
        let rate = CollectiveRate::from_ratio(ratio, g);
        let spectrum = sweep_spectrum(params, &rate, d_c, &grid, Order::All)?;
        match fwhm_detail(&spectrum, baseline) {
            Ok(w) => points.push((ratio, w.width / g, w.crossing_validity)),
            Err(Error::NoWindow(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.2 < VALIDITY_THRESHOLD)
        .map(|p| (p.0, p.1))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = used.iter().copied().unzip();
    let fit = fit_power_law(&xs, &ys)?;
    Ok(ScalingFit {
        optical_depth: d_c,
        points,
        used,
        fit,
    })
}
