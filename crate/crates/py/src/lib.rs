//! Python bindings. Rates are plain floats in whatever unit `gamma31` is
//! given in; lengths are meters.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rddi_eit::coupled::{self, PropagationOptions};
use rddi_eit::eit::{self, FwhmBaseline, Order};
use rddi_eit::geometry::{self, CloudSpec};
use rddi_eit::kernels::{self, KernelInput};
use rddi_eit::rates::{self, MonteCarloOptions, ReferencePolicy};
use rddi_eit::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Domain(_)
        | Error::Invalid(_)
        | Error::Underdetermined(_)
        | Error::Inconsistent { .. }
        | Error::Regime(_)
        | Error::Pole
        | Error::NearFieldDivergence { .. }
        | Error::CoincidentPositions
        | Error::TooFewPoints(_)
        | Error::TooManyAtoms { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn order_from(order: Option<u32>) -> Order {
    order.map_or(Order::All, Order::Finite)
}

fn baseline_from(name: &str) -> PyResult<FwhmBaseline> {
    match name {
        "half_peak" => Ok(FwhmBaseline::HalfPeak),
        "flank_floor" => Ok(FwhmBaseline::FlankFloor),
        other => Err(PyValueError::new_err(format!(
            "baseline must be 'half_peak' or 'flank_floor', got {other:?}"
        ))),
    }
}

fn policy_from(name: &str) -> PyResult<ReferencePolicy> {
    match name {
        "central_slab" => Ok(ReferencePolicy::CentralSlab),
        "full_ensemble" => Ok(ReferencePolicy::FullEnsemble),
        other => Err(PyValueError::new_err(format!(
            "policy must be 'central_slab' or 'full_ensemble', got {other:?}"
        ))),
    }
}

#[pyclass(name = "CloudGeometry", module = "rddi_eit_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyCloud(geometry::CloudGeometry);

#[pymethods]
impl PyCloud {
    #[new]
    #[pyo3(signature = (r_perp, r_l, n_atoms, wavelength = geometry::DEFAULT_WAVELENGTH))]
    fn new(r_perp: f64, r_l: f64, n_atoms: f64, wavelength: f64) -> PyResult<Self> {
        geometry::make_cloud(&CloudSpec {
            n_atoms: Some(n_atoms),
            r_perp: Some(r_perp),
            r_l: Some(r_l),
            lambda: Some(wavelength),
            ..Default::default()
        })
        .map(PyCloud)
        .map_err(py_err)
    }

    #[getter]
    fn r_perp(&self) -> f64 {
        self.0.r_perp
    }
    #[getter]
    fn r_l(&self) -> f64 {
        self.0.r_l
    }
    #[getter]
    fn n_atoms(&self) -> f64 {
        self.0.n_exact
    }
    #[getter]
    fn wavelength(&self) -> f64 {
        self.0.lambda
    }
    #[getter]
    fn wavelength_is_default(&self) -> bool {
        self.0.lambda_is_default
    }
    fn density(&self) -> f64 {
        self.0.density()
    }
    fn optical_depth(&self) -> f64 {
        self.0.optical_depth()
    }
    fn a(&self) -> f64 {
        self.0.a()
    }
    fn m(&self) -> f64 {
        self.0.m()
    }
    fn k_p(&self) -> f64 {
        self.0.k_p()
    }
    fn diluteness(&self) -> f64 {
        self.0.diluteness()
    }

    /// Gaussian positions as a list of `[x, y, z]`.
    fn sample_positions(&self, seed: u64) -> Vec<[f64; 3]> {
        geometry::sample_positions(&self.0, seed).points
    }

    fn __repr__(&self) -> String {
        format!(
            "CloudGeometry(r_perp={:e}, r_l={:e}, n_atoms={}, wavelength={:e})",
            self.0.r_perp, self.0.r_l, self.0.n_exact, self.0.lambda
        )
    }
}

/// Any two of `n_atoms`, `density` (m^-3), `optical_depth`, `r_l` (or `m`)
/// plus `r_perp` determine the cloud.
#[pyfunction]
#[pyo3(signature = (*, r_perp, n_atoms = None, density = None, optical_depth = None, r_l = None, m = None, wavelength = None))]
fn make_cloud(
    r_perp: f64,
    n_atoms: Option<f64>,
    density: Option<f64>,
    optical_depth: Option<f64>,
    r_l: Option<f64>,
    m: Option<f64>,
    wavelength: Option<f64>,
) -> PyResult<PyCloud> {
    geometry::make_cloud(&CloudSpec {
        n_atoms,
        density,
        optical_depth,
        r_perp: Some(r_perp),
        r_l,
        m,
        lambda: wavelength,
    })
    .map(PyCloud)
    .map_err(py_err)
}

#[pyclass(name = "EitParams", module = "rddi_eit_py", from_py_object)]
#[derive(Clone)]
struct PyEitParams(eit::EitParams);

#[pymethods]
impl PyEitParams {
    #[new]
    #[pyo3(signature = (omega_c, delta_p = 0.0, delta_c = 0.0, gamma31 = 1.0, gamma21 = 0.0))]
    fn new(omega_c: f64, delta_p: f64, delta_c: f64, gamma31: f64, gamma21: f64) -> PyResult<Self> {
        let p = eit::EitParams::new(omega_c, delta_p, delta_c, gamma31, gamma21);
        p.validate().map_err(py_err)?;
        Ok(Self(p))
    }

    #[getter]
    fn omega_c(&self) -> f64 {
        self.0.omega_c
    }
    #[getter]
    fn delta_p(&self) -> f64 {
        self.0.delta_p
    }
    #[getter]
    fn delta_c(&self) -> f64 {
        self.0.delta_c
    }
    #[getter]
    fn gamma31(&self) -> f64 {
        self.0.gamma31
    }
    #[getter]
    fn gamma21(&self) -> f64 {
        self.0.gamma21
    }
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }
    fn with_delta_p(&self, delta_p: f64) -> Self {
        Self(self.0.with_delta_p(delta_p))
    }
    /// Single-atom denominator `A`.
    fn denominator(&self) -> PyResult<Complex64> {
        eit::denominator_a(&self.0).map_err(py_err)
    }
    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "EitParams(omega_c={}, delta_p={}, delta_c={}, gamma31={}, gamma21={})",
            p.omega_c, p.delta_p, p.delta_c, p.gamma31, p.gamma21
        )
    }
}

#[pyclass(name = "CollectiveRate", module = "rddi_eit_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyRate(rates::CollectiveRate);

#[pymethods]
impl PyRate {
    #[staticmethod]
    #[pyo3(signature = (ratio, gamma31 = 1.0))]
    fn from_ratio(ratio: f64, gamma31: f64) -> Self {
        Self(rates::CollectiveRate::from_ratio(ratio, gamma31))
    }
    #[getter]
    fn f_c(&self) -> Complex64 {
        self.0.f_c
    }
    #[getter]
    fn gamma_tilde(&self) -> f64 {
        self.0.gamma_tilde
    }
    #[getter]
    fn shift(&self) -> f64 {
        self.0.shift
    }
    #[getter]
    fn uncertainty(&self) -> f64 {
        self.0.uncertainty
    }
    #[getter]
    fn method(&self) -> String {
        format!("{:?}", self.0.method)
    }
    fn __repr__(&self) -> String {
        format!(
            "CollectiveRate(gamma_tilde={}, f_c={}, method={:?})",
            self.0.gamma_tilde, self.0.f_c, self.0.method
        )
    }
}

#[pyclass(name = "Spectrum", module = "rddi_eit_py", frozen)]
struct PySpectrum(eit::Spectrum);

#[pymethods]
impl PySpectrum {
    #[getter]
    fn detunings(&self) -> Vec<f64> {
        self.0.detunings.clone()
    }
    #[getter]
    fn transmission(&self) -> Vec<f64> {
        self.0.transmission.clone()
    }
    #[getter]
    fn validity(&self) -> Vec<f64> {
        self.0.validity.clone()
    }
    #[getter]
    fn flagged(&self) -> Vec<bool> {
        self.0.flagged.clone()
    }

    /// Transparency window; returns a dict with `width`, `left`, `right`,
    /// `level`, `peak` and `crossing_validity`.
    #[pyo3(signature = (baseline = "half_peak"))]
    fn fwhm<'py>(&self, py: Python<'py>, baseline: &str) -> PyResult<Bound<'py, PyDict>> {
        let w = eit::fwhm_detail(&self.0, baseline_from(baseline)?).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("width", w.width)?;
        d.set_item("left", w.left)?;
        d.set_item("right", w.right)?;
        d.set_item("level", w.level)?;
        d.set_item("peak", w.peak)?;
        d.set_item("crossing_validity", w.crossing_validity)?;
        Ok(d)
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    fn __len__(&self) -> usize {
        self.0.detunings.len()
    }
}

#[pyfunction]
#[pyo3(signature = (xi, u, gamma = 1.0))]
fn kernel_f(xi: f64, u: f64, gamma: f64) -> PyResult<f64> {
    kernels::kernel_f(KernelInput::new(xi, u, gamma).map_err(py_err)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (xi, u, gamma = 1.0))]
fn kernel_g(xi: f64, u: f64, gamma: f64) -> PyResult<f64> {
    kernels::kernel_g(KernelInput::new(xi, u, gamma).map_err(py_err)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (cloud, gamma31 = 1.0))]
fn gamma_tilde_closed_form(cloud: &PyCloud, gamma31: f64) -> PyResult<PyRate> {
    rates::gamma_tilde_closed_form(&cloud.0, gamma31)
        .map(PyRate)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (cloud, gamma31 = 1.0))]
fn gamma_tilde_quadrature(cloud: &PyCloud, gamma31: f64) -> PyResult<PyRate> {
    rates::gamma_tilde_quadrature(&cloud.0, gamma31, None)
        .map(PyRate)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (cloud, gamma31 = 1.0))]
fn gamma_tilde_sphere(cloud: &PyCloud, gamma31: f64) -> PyResult<PyRate> {
    rates::gamma_tilde_sphere(&cloud.0, gamma31)
        .map(PyRate)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (cloud, gamma31 = 1.0))]
fn gamma_tilde_needle(cloud: &PyCloud, gamma31: f64) -> PyResult<PyRate> {
    rates::gamma_tilde_needle(&cloud.0, gamma31)
        .map(PyRate)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (cloud, gamma_tilde, gamma31 = 1.0))]
fn collective_shift(cloud: &PyCloud, gamma_tilde: f64, gamma31: f64) -> f64 {
    rates::collective_shift(&cloud.0, gamma_tilde, gamma31)
}

/// Discrete `f_C` averaged over clouds drawn with the given seeds.
#[pyfunction]
#[pyo3(signature = (cloud, params, seeds, policy = "central_slab"))]
fn f_c_monte_carlo(cloud: &PyCloud, params: &PyEitParams, seeds: Vec<u64>, policy: &str) -> PyResult<PyRate> {
    let opts = MonteCarloOptions {
        policy: policy_from(policy)?,
        ..Default::default()
    };
    rates::f_c_monte_carlo_seeds(&cloud.0, &params.0, &opts, &seeds)
        .map(PyRate)
        .map_err(py_err)
}

/// `T` at the parameters' `delta_p`; `order=None` sums all orders.
#[pyfunction]
#[pyo3(signature = (params, f_c, optical_depth, order = None))]
fn transmission(
    params: &PyEitParams,
    f_c: Complex64,
    optical_depth: f64,
    order: Option<u32>,
) -> PyResult<f64> {
    order_from(order)
        .transmission(&params.0, f_c, optical_depth)
        .map_err(py_err)
}

#[pyfunction]
fn validity_ratio(params: &PyEitParams, f_c: Complex64) -> PyResult<f64> {
    eit::validity_ratio(&params.0, f_c).map_err(py_err)
}

/// Spectrum over `detunings` (default: 2001 points over `+-2 max(Omega_c, gamma31)`).
#[pyfunction]
#[pyo3(signature = (params, rate, optical_depth, detunings = None, order = None))]
fn sweep_spectrum(
    params: &PyEitParams,
    rate: &PyRate,
    optical_depth: f64,
    detunings: Option<Vec<f64>>,
    order: Option<u32>,
) -> PyResult<PySpectrum> {
    let grid = match detunings {
        Some(g) => g,
        None => eit::default_grid(&params.0).map_err(py_err)?,
    };
    eit::sweep_spectrum(&params.0, &rate.0, optical_depth, &grid, order_from(order))
        .map(PySpectrum)
        .map_err(py_err)
}

type ScalingTuple = (f64, f64, f64, Vec<(f64, f64)>);

/// Power-law fit `FWHM ~ gamma~^-a`; returns `(exponent, prefactor, r_squared, used)`.
#[pyfunction]
#[pyo3(signature = (params, optical_depth, ratios, baseline = "half_peak"))]
fn fwhm_scaling(
    params: &PyEitParams,
    optical_depth: f64,
    ratios: Vec<f64>,
    baseline: &str,
) -> PyResult<ScalingTuple> {
    let s = eit::fwhm_scaling(&params.0, optical_depth, &ratios, baseline_from(baseline)?).map_err(py_err)?;
    Ok((s.fit.exponent, s.fit.prefactor, s.fit.r_squared, s.used))
}

/// Steady-state coherences of the coupled-dipole system for a probe
/// profile; returns the list of `sigma_13`.
#[pyfunction]
fn solve_coherences(
    cloud: &PyCloud,
    params: &PyEitParams,
    seed: u64,
    probe: Vec<Complex64>,
) -> PyResult<Vec<Complex64>> {
    let pos = geometry::sample_positions(&cloud.0, seed);
    if probe.len() != pos.len() {
        return Err(PyValueError::new_err(format!(
            "probe has {} entries for {} atoms",
            probe.len(),
            pos.len()
        )));
    }
    let m = coupled::build_coupling_matrix(&pos, &params.0).map_err(py_err)?;
    Ok(coupled::solve_coherences(&m, &probe).map_err(py_err)?.sigma)
}

/// Nonlocal 1D propagation through a sampled cloud; returns
/// `(transmission, iterations)`.
#[pyfunction]
#[pyo3(signature = (cloud, params, optical_depth, seed, slabs = 10))]
fn propagate_nonlocal(
    cloud: &PyCloud,
    params: &PyEitParams,
    optical_depth: f64,
    seed: u64,
    slabs: usize,
) -> PyResult<(f64, usize)> {
    let pos = geometry::sample_positions(&cloud.0, seed);
    let opts = PropagationOptions {
        slabs,
        ..Default::default()
    };
    let p = coupled::propagate_nonlocal_1d(&pos, &params.0, optical_depth, Complex64::new(1.0, 0.0), &opts)
        .map_err(py_err)?;
    Ok((p.transmission, p.iterations))
}

#[pyfunction]
fn steady_state_exact(params: &PyEitParams, f_c: Complex64, probe: Complex64) -> PyResult<Complex64> {
    coupled::steady_state_exact(&params.0, f_c, probe).map_err(py_err)
}

#[pymodule]
fn rddi_eit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DEFAULT_WAVELENGTH", geometry::DEFAULT_WAVELENGTH)?;
    m.add_class::<PyCloud>()?;
    m.add_class::<PyEitParams>()?;
    m.add_class::<PyRate>()?;
    m.add_class::<PySpectrum>()?;
    m.add_function(wrap_pyfunction!(make_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_f, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_g, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_tilde_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_tilde_quadrature, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_tilde_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_tilde_needle, m)?)?;
    m.add_function(wrap_pyfunction!(collective_shift, m)?)?;
    m.add_function(wrap_pyfunction!(f_c_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(transmission, m)?)?;
    m.add_function(wrap_pyfunction!(validity_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(fwhm_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(solve_coherences, m)?)?;
    m.add_function(wrap_pyfunction!(propagate_nonlocal, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state_exact, m)?)?;
    Ok(())
}
