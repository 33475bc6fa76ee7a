//! Run configuration: a TOML file with `cloud`, `eit`, `sweep` and `output`
//! sections plus a top-level `seed`. Rates are in units of gamma31.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize};

use rddi_eit::eit::FwhmBaseline;
use rddi_eit::geometry::DEFAULT_WAVELENGTH;
use rddi_eit::rates::ReferencePolicy;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Length in meters; TOML accepts a bare number (meters) or a string with a
/// unit suffix (`"780nm"`, `"25um"`, `"1mm"`, `"0.3cm"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Length(pub f64);

impl<'de> Deserialize<'de> for Length {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Length(v)),
            Raw::Text(s) => parse_length(&s).map(Length).map_err(serde::de::Error::custom),
        }
    }
}

pub fn parse_length(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let units = [
        ("nm", -9),
        ("um", -6),
        ("µm", -6),
        ("mm", -3),
        ("cm", -2),
        ("m", 0),
    ];
    for (suffix, exp) in units {
        if let Some(num) = t.strip_suffix(suffix) {
            let num = num.trim();
            // "10um" -> "10e-6" keeps the decimal value exact
            let exact = if num.contains(['e', 'E']) {
                None
            } else {
                format!("{num}e{exp}").parse::<f64>().ok()
            };
            return exact
                .or_else(|| num.parse::<f64>().ok().map(|v| v * 10f64.powi(exp)))
                .ok_or_else(|| format!("cannot parse length {s:?}"));
        }
    }
    t.parse::<f64>()
        .map_err(|_| format!("cannot parse length {s:?} (use nm, um, mm, cm or m)"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Auto,
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSection {
    pub lambda: Option<Length>,
    /// Transverse radii; `linewidth` iterates over all of them.
    #[serde(default)]
    pub r_perp: Vec<Length>,
    pub r_l: Option<Length>,
    pub m: Option<f64>,
    pub n_atoms: Option<f64>,
    /// Mean densities in cm^-3; `linewidth` draws one curve per entry.
    pub density_per_cm3: Option<Vec<f64>>,
}

impl CloudSection {
    pub fn lambda(&self) -> f64 {
        self.lambda.map_or(DEFAULT_WAVELENGTH, |l| l.0)
    }

    pub fn lambda_is_default(&self) -> bool {
        self.lambda.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EitSection {
    pub omega_c: f64,
    pub delta_c: f64,
    pub gamma21: f64,
}

impl Default for EitSection {
    fn default() -> Self {
        Self {
            omega_c: 5.0,
            delta_c: 0.0,
            gamma21: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Optical depths `D_c`. Defaults: 25 log-spaced values in [1, 400] for
    /// `linewidth`, `[20]` for `spectrum`.
    pub optical_depth: Option<Vec<f64>>,
    /// `gamma~/gamma31` values for spectra.
    pub gamma_tilde: Vec<f64>,
    /// Orders: integers or `"inf"`.
    pub orders: Vec<String>,
    pub points: usize,
    /// Half width of the detuning grid; default `2 Omega_c`.
    pub half_width: Option<f64>,
    pub method: Method,
    pub reference_policy: ReferencePolicy,
    pub baseline: FwhmBaseline,
    /// `gamma~/gamma31` grid for power-law fits; empty disables the fit.
    pub fit_gamma_tilde: Vec<f64>,
    /// Fold `Im f_C` into `delta_p` instead of keeping it in `f_C`.
    pub absorb_shift: bool,
    pub slabs: usize,
    /// Probe detunings for `coupled-dipole`.
    pub detunings: Vec<f64>,
    /// Monte Carlo seeds per estimate.
    pub replicas: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            optical_depth: None,
            gamma_tilde: vec![1.0, 2.0, 5.0],
            orders: vec!["inf".into()],
            points: rddi_eit::eit::DEFAULT_GRID_POINTS,
            half_width: None,
            method: Method::Auto,
            reference_policy: ReferencePolicy::CentralSlab,
            baseline: FwhmBaseline::HalfPeak,
            fit_gamma_tilde: (1..=20).map(f64::from).collect(),
            absorb_shift: true,
            slabs: 10,
            detunings: vec![-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0],
            replicas: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: Format,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: Format::Both,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cloud: CloudSection,
    #[serde(default)]
    pub eit: EitSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, why: &str| Err(ConfigError(format!("{field}: {why}")));
        if !(self.eit.omega_c >= 0.0) {
            return bad("eit.omega_c", "must be >= 0");
        }
        if !(self.eit.gamma21 >= 0.0) {
            return bad("eit.gamma21", "must be >= 0");
        }
        if let Some(l) = self.cloud.lambda {
            if !(l.0 > 0.0) {
                return bad("cloud.lambda", "must be positive");
            }
        }
        if let Some(d) = &self.cloud.density_per_cm3 {
            if d.is_empty() {
                return bad("cloud.density_per_cm3", "list is empty");
            }
            if d.iter().any(|v| !(*v > 0.0)) {
                return bad("cloud.density_per_cm3", "densities must be positive");
            }
        }
        if let Some(d) = &self.sweep.optical_depth {
            if d.is_empty() {
                return bad("sweep.optical_depth", "list is empty");
            }
            if d.iter().any(|v| !(*v >= 0.0)) {
                return bad("sweep.optical_depth", "optical depths must be >= 0");
            }
        }
        if self.sweep.gamma_tilde.iter().any(|v| !(*v > 0.0)) {
            return bad("sweep.gamma_tilde", "values must be positive");
        }
        if self.sweep.points < 3 {
            return bad("sweep.points", "need at least 3 grid points");
        }
        if self.sweep.slabs == 0 {
            return bad("sweep.slabs", "need at least one slab");
        }
        if self.sweep.replicas < 2 && self.sweep.method == Method::MonteCarlo {
            return bad("sweep.replicas", "Monte Carlo needs at least 2 replicas");
        }
        self.orders()?;
        Ok(())
    }

    pub fn orders(&self) -> Result<Vec<rddi_eit::eit::Order>, ConfigError> {
        use rddi_eit::eit::Order;
        self.sweep
            .orders
            .iter()
            .map(|s| match s.trim() {
                "inf" | "all" => Ok(Order::All),
                other => other.parse::<u32>().map(Order::Finite).map_err(|_| {
                    ConfigError(format!("sweep.orders: {other:?} is not an integer or \"inf\""))
                }),
            })
            .collect()
    }
}
