//! Coupled-dipole treatment beyond the local-field approximation.
//!
//! Weak-probe coherences of `N` atoms solve `M sigma = (i/2) Omega_p`, where
//! `M` has `-A` on the diagonal and the pair couplings `K_ab` off it.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::eit::{denominator_a, EitParams};
use crate::error::{Error, Result};
use crate::geometry::AtomPositions;
use crate::kernels::{self, DEFAULT_G_CUTOFF};
use crate::rates::{coupling_row_sum, DEFAULT_DIPOLE};
use crate::Vec3;

/// Largest `N` accepted by the dense solver.
pub const MAX_DENSE_ATOMS: usize = 5000;

/// Beyond this 1-norm condition estimate the matrix is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    pub entries: Mat<Complex64>,
    /// Susceptibility denominator; every diagonal entry is `-a`.
    pub a: Complex64,
    pub positions: AtomPositions,
    pub params: EitParams,
    pub dipole: Vec3,
}

impl CouplingMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }
}

pub fn build_coupling_matrix(positions: &AtomPositions, params: &EitParams) -> Result<CouplingMatrix> {
    build_coupling_matrix_with(positions, params, DEFAULT_DIPOLE, DEFAULT_G_CUTOFF)
}

pub fn build_coupling_matrix_with(
    positions: &AtomPositions,
    params: &EitParams,
    dipole: Vec3,
    xi_cutoff: f64,
) -> Result<CouplingMatrix> {
    let n = positions.len();
    if n > MAX_DENSE_ATOMS {
        return Err(Error::TooManyAtoms {
            n,
            limit: MAX_DENSE_ATOMS,
        });
    }
    if n == 0 {
        return Err(Error::Invalid("no atoms".into()));
    }
    params.validate()?;
    let a = denominator_a(params)?;
    let k = positions.k_vector();
    let pts = &positions.points;

    let mut close: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..n).filter_map(move |j| {
                let xi = k[2] * kernels::norm(&kernels::sub(&pts[i], &pts[j]));
                (xi < xi_cutoff).then_some((i, j))
            })
        })
        .collect();
    if !close.is_empty() {
        close.sort_unstable();
        return Err(Error::NearFieldPairs { pairs: close });
    }

    let gamma = params.gamma();
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Ok(-a)
                    } else {
                        kernels::pair_coupling_with_cutoff(&pts[i], &pts[j], &k, &dipole, gamma, xi_cutoff)
                            .map(|c| c.value)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let entries = Mat::from_fn(n, n, |i, j| rows[i][j]);
    Ok(CouplingMatrix {
        entries,
        a,
        positions: positions.clone(),
        params: *params,
        dipole,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSolution {
    pub sigma: Vec<Complex64>,
    /// Estimated 1-norm condition number of `M`.
    pub condition: f64,
    /// `||i M sigma + Omega/2|| / ||Omega/2||`.
    pub residual: f64,
}

/// Factored coupling matrix, reusable across right-hand sides.
pub struct CouplingSolver {
    lu: faer::linalg::solvers::PartialPivLu<Complex64>,
    matrix: Mat<Complex64>,
    pub condition: f64,
}

impl CouplingSolver {
    pub fn new(m: &Mat<Complex64>) -> Result<Self> {
        let lu = m.partial_piv_lu();
        let norm = one_norm(m);
        let inv_norm = inverse_one_norm_estimate(&lu, m.nrows());
        let condition = norm * inv_norm;
        if !condition.is_finite() || condition > SINGULAR_CONDITION {
            return Err(Error::Singular { condition });
        }
        Ok(Self {
            lu,
            matrix: m.clone(),
            condition,
        })
    }

    /// `sigma = (i/2) M^{-1} Omega`.
    pub fn solve(&self, probe: &[Complex64]) -> Result<CoherenceSolution> {
        let n = self.matrix.nrows();
        if probe.len() != n {
            return Err(Error::Invalid(format!(
                "probe has {} entries for {n} atoms",
                probe.len()
            )));
        }
        let half_i = Complex64::new(0.0, 0.5);
        let mut rhs = Mat::from_fn(n, 1, |i, _| probe[i] * half_i);
        self.lu.solve_in_place(&mut rhs);
        let sigma: Vec<Complex64> = (0..n).map(|i| rhs[(i, 0)]).collect();
        if sigma.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::Singular {
                condition: self.condition,
            });
        }
        let ms = &self.matrix * &rhs;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let half = probe[i] * 0.5;
            num += (Complex64::i() * ms[(i, 0)] + half).norm_sqr();
            den += half.norm_sqr();
        }
        let residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        Ok(CoherenceSolution {
            sigma,
            condition: self.condition,
            residual,
        })
    }
}

fn one_norm(m: &Mat<Complex64>) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager-Higham estimate of `||M^{-1}||_1` from solves with the LU factors.
fn inverse_one_norm_estimate(lu: &faer::linalg::solvers::PartialPivLu<Complex64>, n: usize) -> f64 {
    let col_norm = |v: &Mat<Complex64>| (0..n).map(|i| v[(i, 0)].norm()).sum::<f64>();
    let mut x = Mat::from_fn(n, 1, |_, _| Complex64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    for iter in 0..5 {
        let mut y = x.clone();
        lu.solve_in_place(&mut y);
        let ny = col_norm(&y);
        if !ny.is_finite() {
            return f64::INFINITY;
        }
        if iter > 0 && ny <= estimate {
            break;
        }
        estimate = ny;
        let mut z = Mat::from_fn(n, 1, |i, _| {
            let v = y[(i, 0)];
            if v.norm() > 0.0 {
                v / v.norm()
            } else {
                Complex64::new(1.0, 0.0)
            }
        });
        lu.solve_adjoint_in_place(&mut z);
        let (jmax, zmax) =
            (0..n)
                .map(|i| (i, z[(i, 0)].norm()))
                .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let ztx: f64 = (0..n).map(|i| (z[(i, 0)].conj() * x[(i, 0)]).re).sum();
        if iter > 0 && zmax <= ztx {
            break;
        }
        x = Mat::from_fn(n, 1, |i, _| {
            if i == jmax {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
    }
    // alternating-sign probe guards against the estimator's known blind spots
    let mut alt = Mat::from_fn(n, 1, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        Complex64::new(sign * (1.0 + i as f64 / denom), 0.0)
    });
    lu.solve_in_place(&mut alt);
    let alt_est = 2.0 * col_norm(&alt) / (3.0 * n as f64);
    estimate.max(alt_est)
}

pub fn solve_coherences(m: &CouplingMatrix, probe: &[Complex64]) -> Result<CoherenceSolution> {
    CouplingSolver::new(&m.entries)?.solve(probe)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoAtomModes {
    /// Eigenvalues of the two-atom coherence generator, superradiant first.
    pub eigenvalues: [Complex64; 2],
    /// `-Re` of each eigenvalue.
    pub decay_rates: [f64; 2],
    /// `Im` of each eigenvalue.
    pub shifts: [f64; 2],
}

/// Collective modes of two coupled atoms.
///
/// The generator `A I - K` has eigenvalues `A -/+ sqrt(K_12 K_21)`, and the
/// propagation phases cancel in the product, leaving `A -/+ (F + 2iG)/2`.
/// With `A = -gamma31` the decay rates are `gamma31 +/- F/2`. The separation
/// is in units where the probe wave number is `2 pi / lambda` with `lambda = 1`.
pub fn two_atom_eigenmodes(separation: &Vec3, params: &EitParams, dipole: &Vec3) -> Result<TwoAtomModes> {
    let d_hat = kernels::unit(dipole)?;
    let r = kernels::norm(separation);
    if !(r > 0.0) {
        return Err(Error::CoincidentPositions);
    }
    let a = denominator_a(params)?;
    let k = 2.0 * std::f64::consts::PI;
    let u = (kernels::dot(&d_hat, separation) / r).clamp(-1.0, 1.0);
    let input = kernels::KernelInput::new(k * r, u, params.gamma())?;
    let f = kernels::kernel_f(input)?;
    let g = 0.75 * params.gamma() * {
        // G without the cutoff: the eigenmodes stay defined as xi -> 0
        let xi = k * r;
        let u2 = u * u;
        let (s, c) = xi.sin_cos();
        -(1.0 - u2) * c / xi + (1.0 - 3.0 * u2) * (s / (xi * xi) + c / (xi * xi * xi))
    };
    let w = Complex64::new(f, 2.0 * g) / 2.0;
    let eigenvalues = [a - w, a + w];
    Ok(TwoAtomModes {
        eigenvalues,
        decay_rates: [-eigenvalues[0].re, -eigenvalues[1].re],
        shifts: [eigenvalues[0].im, eigenvalues[1].im],
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Full dipole-dipole matrix.
    #[default]
    Full,
    /// Each atom feels its slab's mean coupling sum `f_C` (local field).
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationOptions {
    pub slabs: usize,
    pub coupling: CouplingMode,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub dipole: Vec3,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            slabs: 10,
            coupling: CouplingMode::Full,
            max_iterations: 200,
            tolerance: 1e-10,
            dipole: DEFAULT_DIPOLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldProfile {
    /// Slab boundaries along `z` (m), strictly increasing.
    pub z: Vec<f64>,
    pub amplitude: Vec<Complex64>,
    pub r_l: f64,
}

impl FieldProfile {
    pub fn to_csv(&self, lambda: f64, lambda_is_default: bool) -> String {
        let mut out = crate::eit::provenance_header(Some(lambda), lambda_is_default);
        out.push_str("# 1D propagation along z; the transverse Laplacian is omitted\n");
        out.push_str("z_over_RL,Re_amplitude,Im_amplitude\n");
        for (z, a) in self.z.iter().zip(&self.amplitude) {
            let _ = writeln!(out, "{},{},{}", z / self.r_l, a.re, a.im);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub profile: FieldProfile,
    /// `|Omega_p(L) / Omega_p(0)|^2`.
    pub transmission: f64,
    pub iterations: usize,
    pub relaxed: bool,
}

/// Self-consistent 1D propagation of the probe through the atoms.
///
/// Atoms are split into equal-population slabs along `z`, each carrying an
/// equal share `D / S` of the optical depth and driven uniformly by the field
/// at its center. Each slab advances the field by
/// `exp(i (D_j Gamma / 2) chi_j)` with `chi_j` the slab-averaged coherence per
/// unit drive, which is exact when the atoms respond locally.
pub fn propagate_nonlocal_1d(
    positions: &AtomPositions,
    params: &EitParams,
    d: f64,
    input: Complex64,
    opts: &PropagationOptions,
) -> Result<Propagation> {
    let n = positions.len();
    let slabs = opts.slabs;
    if slabs == 0 || slabs > n {
        return Err(Error::Invalid(format!(
            "need 1 <= slabs <= N, got {slabs} slabs for {n} atoms"
        )));
    }
    if !(d >= 0.0) {
        return Err(Error::Invalid(format!("optical depth must be >= 0, got {d}")));
    }
    if input.norm() == 0.0 {
        return Err(Error::Invalid("input amplitude must be nonzero".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        positions.points[i][2]
            .total_cmp(&positions.points[j][2])
            .then(i.cmp(&j))
    });
    let members: Vec<Vec<usize>> = (0..slabs)
        .map(|s| order[s * n / slabs..(s + 1) * n / slabs].to_vec())
        .collect();
    let mut slab_of = vec![0; n];
    for (s, m) in members.iter().enumerate() {
        for &i in m {
            slab_of[i] = s;
        }
    }
    let z_of = |i: usize| positions.points[i][2];
    let mut z = Vec::with_capacity(slabs + 1);
    z.push(z_of(order[0]));
    for s in 1..slabs {
        z.push(0.5 * (z_of(*members[s - 1].last().unwrap()) + z_of(members[s][0])));
    }
    z.push(z_of(order[n - 1]));
    if z.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid(
            "slab boundaries are not strictly increasing".into(),
        ));
    }

    let depth_share = d * params.gamma() / 2.0 / slabs as f64;
    let i = Complex64::i();

    // chi per slab as a function of the slab drive fields
    enum Response {
        Matrix(CouplingSolver),
        Local(Vec<Complex64>),
    }
    let response = match opts.coupling {
        CouplingMode::Full => {
            let m = build_coupling_matrix_with(positions, params, opts.dipole, DEFAULT_G_CUTOFF)?;
            Response::Matrix(CouplingSolver::new(&m.entries)?)
        }
        CouplingMode::MeanField => {
            params.validate()?;
            let a = denominator_a(params)?;
            let dipole = kernels::unit(&opts.dipole)?;
            let k = positions.cloud.k_p();
            let chis = members
                .iter()
                .map(|m| {
                    let sum: Complex64 = m
                        .iter()
                        .map(|&alpha| {
                            coupling_row_sum(
                                &positions.points,
                                alpha,
                                k,
                                &dipole,
                                params.gamma(),
                                DEFAULT_G_CUTOFF,
                            )
                            .0
                        })
                        .sum();
                    let f_c = sum / m.len() as f64;
                    -0.5 * i / (a - f_c)
                })
                .collect();
            Response::Local(chis)
        }
    };

    let advance = |chis: &[Complex64]| -> (Vec<Complex64>, Vec<Complex64>) {
        let mut edges = Vec::with_capacity(slabs + 1);
        let mut centers = Vec::with_capacity(slabs);
        let mut field = input;
        edges.push(field);
        for chi in chis {
            let step = i * depth_share * chi;
            centers.push(field * (0.5 * step).exp());
            field *= step.exp();
            edges.push(field);
        }
        (edges, centers)
    };

    let (edges, iterations, relaxed) = match &response {
        Response::Local(chis) => {
            let (edges, _) = advance(chis);
            (edges, 1, false)
        }
        Response::Matrix(solver) => {
            // start from the uncoupled local response
            let a = denominator_a(params)?;
            let mut chis = vec![-0.5 * i / a; slabs];
            let (_, mut centers) = advance(&chis);
            let mut omega = 1.0;
            let mut relaxed = false;
            let mut last_change = f64::INFINITY;
            let mut rises = 0;
            let mut converged = None;
            for iter in 1..=opts.max_iterations {
                let drive: Vec<Complex64> = (0..n).map(|a| centers[slab_of[a]]).collect();
                let sol = solver.solve(&drive)?;
                let new_chis: Vec<Complex64> = members
                    .iter()
                    .enumerate()
                    .map(|(s, m)| {
                        let mean = m.iter().map(|&a| sol.sigma[a]).sum::<Complex64>() / m.len() as f64;
                        mean / centers[s]
                    })
                    .collect();
                for (c, nc) in chis.iter_mut().zip(&new_chis) {
                    *c = *c + omega * (nc - *c);
                }
                let (_, next) = advance(&chis);
                let change = next
                    .iter()
                    .zip(&centers)
                    .map(|(a, b)| (a - b).norm() / b.norm())
                    .fold(0.0, f64::max);
                centers = next;
                if change < opts.tolerance {
                    converged = Some(iter);
                    break;
                }
                if change > last_change {
                    rises += 1;
                    if rises >= 3 && !relaxed {
                        omega = 0.5;
                        relaxed = true;
                    }
                }
                last_change = change;
            }
            let iterations = converged.ok_or_else(|| Error::NonConvergence {
                iterations: opts.max_iterations,
                detail: format!(
                    "relative field change {last_change:.3e} above {:.1e}",
                    opts.tolerance
                ),
            })?;
            let (edges, _) = advance(&chis);
            (edges, iterations, relaxed)
        }
    };

    let transmission = (edges[slabs] / input).norm_sqr();
    Ok(Propagation {
        profile: FieldProfile {
            z,
            amplitude: edges,
            r_l: positions.cloud.r_l,
        },
        transmission,
        iterations,
        relaxed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateOptions {
    /// Relative change per unit `1/gamma31`, scaled by the slowest decay rate.
    pub tolerance: f64,
    /// Integration horizon in units of `1/gamma31`.
    pub max_time: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_time: 1e7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub sigma12: Complex64,
    pub sigma13: Complex64,
    /// Integrated time in units of `1/gamma31`.
    pub time: f64,
    pub steps: u64,
}

/// Integrates the weak-probe coherence equations from rest with RK4.
///
/// ```text
/// d sigma12/dt = (i delta_2 - gamma21) sigma12 + i (Omega_c^*/2) sigma13
/// d sigma13/dt = (i delta_p - gamma31 - f_C) sigma13 + i (Omega_c/2) sigma12 + i Omega_p/2
/// ```
///
/// Integration stops once the relative change over one `1/gamma31` falls
/// below `tolerance * min(1, r_slow/gamma31)`, where `r_slow` bounds every
/// mode's decay rate from below.
pub fn steady_state_time_domain(
    params: &EitParams,
    f_c: Complex64,
    probe: Complex64,
    opts: &SteadyStateOptions,
) -> Result<SteadyState> {
    params.validate()?;
    let i = Complex64::i();
    let g31 = params.gamma31;
    let r_slow = params.gamma21.min(g31 + f_c.re);
    if !(r_slow > 0.0) {
        return Err(Error::Invalid(format!(
            "steady state needs gamma21 > 0 and gamma31 + Re f_C > 0 (slowest rate {r_slow:.3e})"
        )));
    }
    let j = [
        [i * params.delta_2() - params.gamma21, i * params.omega_c / 2.0],
        [i * params.omega_c / 2.0, i * params.delta_p - g31 - f_c],
    ];
    let b = [Complex64::new(0.0, 0.0), i * probe / 2.0];
    let rhs = |x: &[Complex64; 2]| -> [Complex64; 2] {
        [
            j[0][0] * x[0] + j[0][1] * x[1] + b[0],
            j[1][0] * x[0] + j[1][1] * x[1] + b[1],
        ]
    };
    let spectral = j.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    // RK4 is stable for |h lambda| below ~2.8; the unit check interval is
    // split into an integer number of steps
    let per_unit = ((spectral / g31) / 0.5).ceil().max(4.0) as u64;
    let h = 1.0 / (g31 * per_unit as f64);
    let threshold = opts.tolerance * (r_slow / g31).min(1.0);

    let mut x = [Complex64::new(0.0, 0.0); 2];
    let mut steps = 0u64;
    let mut time = 0.0;
    let mut quiet = 0;
    let mut change = f64::INFINITY;
    while time < opts.max_time {
        let before = x;
        for _ in 0..per_unit {
            let k1 = rhs(&x);
            let k2 = rhs(&[x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
            let k3 = rhs(&[x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
            let k4 = rhs(&[x[0] + h * k3[0], x[1] + h * k3[1]]);
            for c in 0..2 {
                x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        steps += per_unit;
        time += 1.0;
        let scale = (x[0].norm_sqr() + x[1].norm_sqr()).sqrt();
        let diff = ((x[0] - before[0]).norm_sqr() + (x[1] - before[1]).norm_sqr()).sqrt();
        change = diff / scale;
        if !change.is_finite() {
            return Err(Error::NonConvergence {
                iterations: steps as usize,
                detail: "integration blew up".into(),
            });
        }
        // two consecutive quiet intervals guard against an oscillation
        // happening to line up with the check interval
        if change < threshold {
            quiet += 1;
            if quiet >= 2 {
                return Ok(SteadyState {
                    sigma12: x[0],
                    sigma13: x[1],
                    time,
                    steps,
                });
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::NonConvergence {
        iterations: steps as usize,
        detail: format!(
            "relative change {change:.3e} per unit time after t = {time}; slowest mode decays at >= {r_slow:.3e}"
        ),
    })
}

/// Analytic steady state `-(i Omega_p / 2) / (A - f_C)` of the same equations.
pub fn steady_state_exact(params: &EitParams, f_c: Complex64, probe: Complex64) -> Result<Complex64> {
    let a = denominator_a(params)?;
    Ok(-0.5 * Complex64::i() * probe / (a - f_c))
}
