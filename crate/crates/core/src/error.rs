use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("near-field divergence: xi = {xi:.3e} is below the cutoff {cutoff:.3e}")]
    NearFieldDivergence { xi: f64, cutoff: f64 },

    #[error("coincident positions: the pair coupling is undefined at zero separation")]
    CoincidentPositions,

    #[error("underdetermined cloud spec: {0}")]
    Underdetermined(String),

    #[error(
        "inconsistent cloud spec: {field} given as {given:.6e} but the other inputs imply {derived:.6e}"
    )]
    Inconsistent {
        field: &'static str,
        given: f64,
        derived: f64,
    },

    #[error("regime error: {0}")]
    Regime(String),

    #[error(
        "quadrature did not converge: estimate {estimate:.6e}, error {error:.3e} after {intervals} intervals"
    )]
    QuadratureNonConvergence {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("pole of the susceptibility denominator (delta_2 = 0, gamma21 = 0, Omega_c > 0)")]
    Pole,

    #[error("no transparency window: {0}")]
    NoWindow(String),

    #[error("coupling matrix is singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("{n} atoms exceeds the dense-solver limit of {limit}; reduce N or use the analytic rates")]
    TooManyAtoms { n: usize, limit: usize },

    #[error("pairs below the near-field cutoff: {pairs:?}")]
    NearFieldPairs { pairs: Vec<(usize, usize)> },

    #[error("{excluded} of {total} pairs fall below the near-field cutoff (limit 1%)")]
    ExcludedPairs { excluded: usize, total: usize },

    #[error("did not converge after {iterations} iterations: {detail}")]
    NonConvergence { iterations: usize, detail: String },

    #[error("{0} requires >= 2 points")]
    TooFewPoints(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
