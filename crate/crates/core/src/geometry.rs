//! Gaussian cigar clouds: parameterization, consistency relations and
//! position sampling.
//!
//! The density is `rho(r) ∝ exp(-(x^2+y^2)/R_perp^2) exp(-z^2/R_L^2)` with the
//! probe propagating along `z`. Lengths are in meters.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, DEFAULT_G_CUTOFF};
use crate::Vec3;

/// Probe wavelength used when none is given (Rb D2 line).
pub const DEFAULT_WAVELENGTH: f64 = 780e-9;

const CONSISTENCY_TOL: f64 = 1e-3;

fn pi_three_halves() -> f64 {
    PI * PI.sqrt()
}

/// Resonant scattering cross section `3 lambda^2 / (4 pi)`.
pub fn cross_section(lambda: f64) -> f64 {
    3.0 * lambda * lambda / (4.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudGeometry {
    /// Transverse 1/e radius.
    pub r_perp: f64,
    /// Longitudinal 1/e radius.
    pub r_l: f64,
    pub lambda: f64,
    /// Atom number before rounding; every derived quantity uses this value.
    pub n_exact: f64,
    /// True when `lambda` was not given and fell back to [`DEFAULT_WAVELENGTH`].
    pub lambda_is_default: bool,
}

impl CloudGeometry {
    /// Atom count rounded to the nearest integer.
    pub fn n(&self) -> usize {
        self.n_exact.round() as usize
    }

    pub fn k_p(&self) -> f64 {
        2.0 * PI / self.lambda
    }

    pub fn sigma(&self) -> f64 {
        cross_section(self.lambda)
    }

    pub fn volume(&self) -> f64 {
        pi_three_halves() * self.r_perp * self.r_perp * self.r_l
    }

    pub fn density(&self) -> f64 {
        self.n_exact / self.volume()
    }

    /// Effective optical depth `D_c = 2 rho sigma R_L`.
    pub fn optical_depth(&self) -> f64 {
        2.0 * self.density() * self.sigma() * self.r_l
    }

    /// `a = k_p^2 R_perp^2 / 4`.
    pub fn a(&self) -> f64 {
        let k = self.k_p() * self.r_perp;
        k * k / 4.0
    }

    /// `b = k_p^2 R_L^2 / 4`.
    pub fn b(&self) -> f64 {
        let k = self.k_p() * self.r_l;
        k * k / 4.0
    }

    /// Aspect parameter `m = b / a = (R_L / R_perp)^2`.
    pub fn m(&self) -> f64 {
        let r = self.r_l / self.r_perp;
        r * r
    }

    /// Dimensionless density `rho lambda^3`.
    pub fn diluteness(&self) -> f64 {
        self.density() * self.lambda.powi(3)
    }

    /// Same cloud with both radii scaled by `factor` at fixed atom number.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            r_perp: self.r_perp * factor,
            r_l: self.r_l * factor,
            ..*self
        }
    }

    /// Same geometry holding `n` atoms.
    pub fn with_atoms(&self, n: f64) -> Self {
        Self { n_exact: n, ..*self }
    }
}

/// Partial description of a cloud; [`make_cloud`] fills in the rest.
///
/// `r_perp` is required. The longitudinal size is given either as `r_l` or as
/// the aspect parameter `m`. Of `{n_atoms, density, optical_depth, r_l}` any
/// two determine the cloud, except the pair `(n_atoms, optical_depth)`, which
/// is degenerate because `D_c = 2 sigma N / (pi^{3/2} R_perp^2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CloudSpec {
    pub n_atoms: Option<f64>,
    /// Mean density `N / V` (m^-3).
    pub density: Option<f64>,
    pub optical_depth: Option<f64>,
    pub r_perp: Option<f64>,
    pub r_l: Option<f64>,
    pub m: Option<f64>,
    pub lambda: Option<f64>,
}

fn positive(name: &str, v: Option<f64>) -> Result<Option<f64>> {
    match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => Err(Error::Invalid(format!(
            "{name} must be positive and finite, got {x}"
        ))),
        other => Ok(other),
    }
}

fn check(field: &'static str, given: Option<f64>, derived: f64) -> Result<()> {
    if let Some(g) = given {
        if ((g - derived) / derived).abs() > CONSISTENCY_TOL {
            return Err(Error::Inconsistent {
                field,
                given: g,
                derived,
            });
        }
    }
    Ok(())
}

pub fn make_cloud(spec: &CloudSpec) -> Result<CloudGeometry> {
    let n = positive("n_atoms", spec.n_atoms)?;
    let rho = positive("density", spec.density)?;
    let dc = positive("optical_depth", spec.optical_depth)?;
    let r_perp = positive("r_perp", spec.r_perp)?
        .ok_or_else(|| Error::Underdetermined("r_perp is required".into()))?;
    let m = positive("m", spec.m)?;
    let r_l_given = positive("r_l", spec.r_l)?;
    let lambda = positive("lambda", spec.lambda)?;
    let lambda_is_default = lambda.is_none();
    let lambda = lambda.unwrap_or(DEFAULT_WAVELENGTH);
    let sigma = cross_section(lambda);
    let area = pi_three_halves() * r_perp * r_perp;

    let r_l_from_m = m.map(|m| r_perp * m.sqrt());
    if let (Some(given), Some(from_m)) = (r_l_given, r_l_from_m) {
        check("r_l", Some(given), from_m)?;
    }
    let r_l_known = r_l_given.or(r_l_from_m);

    let r_l = match (r_l_known, n, rho, dc) {
        (Some(r), ..) => r,
        (None, Some(n), Some(rho), _) => n / (rho * area),
        (None, _, Some(rho), Some(dc)) => dc / (2.0 * rho * sigma),
        _ => {
            return Err(Error::Underdetermined(
                "need two of {n_atoms, density, optical_depth, r_l/m}, \
                 and (n_atoms, optical_depth) alone is degenerate"
                    .into(),
            ))
        }
    };
    let density = match (rho, n, dc) {
        (Some(rho), ..) => rho,
        (None, Some(n), _) => n / (area * r_l),
        (None, None, Some(dc)) => dc / (2.0 * sigma * r_l),
        _ => {
            return Err(Error::Underdetermined(
                "need one of {n_atoms, density, optical_depth} besides the size".into(),
            ))
        }
    };

    let n_exact = density * area * r_l;
    check("n_atoms", n, n_exact)?;
    check("density", rho, density)?;
    check("optical_depth", dc, 2.0 * density * sigma * r_l)?;
    check("r_l", r_l_known, r_l)?;
    if n_exact.round() < 1.0 {
        return Err(Error::Invalid(format!(
            "cloud holds {n_exact:.3} atoms, need >= 1"
        )));
    }

    Ok(CloudGeometry {
        r_perp,
        r_l,
        lambda,
        n_exact,
        lambda_is_default,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomPositions {
    pub points: Vec<Vec3>,
    pub seed: u64,
    pub stream: u64,
    pub cloud: CloudGeometry,
}

impl AtomPositions {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Probe wave vector, along `z`.
    pub fn k_vector(&self) -> Vec3 {
        [0.0, 0.0, self.cloud.k_p()]
    }
}

/// Draw `cloud.n()` positions from the cloud's Gaussian density.
pub fn sample_positions(cloud: &CloudGeometry, seed: u64) -> AtomPositions {
    sample_positions_stream(cloud, seed, 0)
}

/// As [`sample_positions`], on an independent ChaCha stream so parallel
/// replicas sharing a seed stay reproducible.
pub fn sample_positions_stream(cloud: &CloudGeometry, seed: u64, stream: u64) -> AtomPositions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // exp(-x^2/R^2) is a normal law with standard deviation R/sqrt(2)
    let transverse = Normal::new(0.0, cloud.r_perp / 2f64.sqrt()).expect("finite radius");
    let longitudinal = Normal::new(0.0, cloud.r_l / 2f64.sqrt()).expect("finite radius");
    let points = (0..cloud.n())
        .map(|_| {
            [
                transverse.sample(&mut rng),
                transverse.sample(&mut rng),
                longitudinal.sample(&mut rng),
            ]
        })
        .collect();
    AtomPositions {
        points,
        seed,
        stream,
        cloud: *cloud,
    }
}

/// Pair statistics used for diagnostics and Monte Carlo variance reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    /// Nearest-neighbour distance for each atom, in input order.
    pub nearest_neighbor: Vec<f64>,
    pub min_distance: f64,
    pub mean_nearest_neighbor: f64,
    pub median_nearest_neighbor: f64,
    /// Smallest `k_p r` over all pairs.
    pub min_xi: f64,
    /// Unordered pairs with `k_p r` below the shift-kernel cutoff.
    pub near_field_pairs: usize,
    /// Standard deviation of the longitudinal phase `k_p z` (radians).
    pub phase_spread: f64,
}

pub fn cross_section_stats(positions: &AtomPositions) -> Result<ClusterStats> {
    cross_section_stats_with_cutoff(positions, DEFAULT_G_CUTOFF)
}

pub fn cross_section_stats_with_cutoff(positions: &AtomPositions, xi_cutoff: f64) -> Result<ClusterStats> {
    let pts = &positions.points;
    if pts.len() < 2 {
        return Err(Error::TooFewPoints("cross_section_stats"));
    }
    let k = positions.cloud.k_p();
    let per_atom: Vec<(f64, usize)> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut nearest = f64::INFINITY;
            let mut close = 0;
            for (j, q) in pts.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = kernels::norm(&kernels::sub(&pts[i], q));
                nearest = nearest.min(d);
                if j > i && k * d < xi_cutoff {
                    close += 1;
                }
            }
            (nearest, close)
        })
        .collect();

    let nearest_neighbor: Vec<f64> = per_atom.iter().map(|p| p.0).collect();
    let near_field_pairs = per_atom.iter().map(|p| p.1).sum();
    let min_distance = nearest_neighbor.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_nearest_neighbor = nearest_neighbor.iter().sum::<f64>() / pts.len() as f64;
    let mut sorted = nearest_neighbor.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median_nearest_neighbor = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let phases: Vec<f64> = pts.iter().map(|p| k * p[2]).collect();
    let mean_phase = phases.iter().sum::<f64>() / phases.len() as f64;
    let phase_spread =
        (phases.iter().map(|p| (p - mean_phase).powi(2)).sum::<f64>() / (phases.len() - 1) as f64).sqrt();

    Ok(ClusterStats {
        nearest_neighbor,
        min_distance,
        mean_nearest_neighbor,
        median_nearest_neighbor,
        min_xi: k * min_distance,
        near_field_pairs,
        phase_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const UM: f64 = 1e-6;
    const PER_CM3: f64 = 1e6;

    #[test]
    fn cloud_from_density_and_optical_depth() {
        let cloud = make_cloud(&CloudSpec {
            density: Some(5e10 * PER_CM3),
            optical_depth: Some(50.0),
            r_perp: Some(25.0 * UM),
            lambda: Some(780e-9),
            ..Default::default()
        })
        .unwrap();
        // R_L = D_c / (2 rho sigma), N = rho pi^{3/2} R_perp^2 R_L
        let sigma = 3.0 * 780e-9f64.powi(2) / (4.0 * PI);
        let r_l = 50.0 / (2.0 * 5e16 * sigma);
        assert_relative_eq!(cloud.r_l, r_l, max_relative = 1e-14);
        assert_relative_eq!(cloud.r_l, 0.344e-2, max_relative = 2e-3);
        assert_relative_eq!(cloud.n_exact, 6.0e5, max_relative = 2e-3);
        assert_eq!(cloud.n(), cloud.n_exact.round() as usize);
        assert!(!cloud.lambda_is_default);
    }

    #[test]
    fn single_atom_sphere() {
        let lambda = 1e-6;
        let cloud = make_cloud(&CloudSpec {
            n_atoms: Some(1.0),
            r_perp: Some(lambda),
            r_l: Some(lambda),
            lambda: Some(lambda),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cloud.m(), 1.0);
        assert_relative_eq!(
            cloud.density(),
            1.0 / (PI.powf(1.5) * lambda.powi(3)),
            max_relative = 1e-14
        );
    }

    #[test]
    fn wider_cloud_at_fixed_density_and_volume() {
        let narrow = make_cloud(&CloudSpec {
            density: Some(5e16),
            optical_depth: Some(50.0),
            r_perp: Some(25.0 * UM),
            ..Default::default()
        })
        .unwrap();
        let wide = make_cloud(&CloudSpec {
            density: Some(5e16),
            n_atoms: Some(narrow.n_exact),
            r_perp: Some(50.0 * UM),
            ..Default::default()
        })
        .unwrap();
        assert_relative_eq!(wide.volume(), narrow.volume(), max_relative = 1e-12);
        assert_relative_eq!(wide.optical_depth(), 12.5, max_relative = 1e-12);
    }

    #[test]
    fn default_wavelength_is_flagged() {
        let cloud = make_cloud(&CloudSpec {
            n_atoms: Some(100.0),
            r_perp: Some(10.0 * UM),
            m: Some(4.0),
            ..Default::default()
        })
        .unwrap();
        assert!(cloud.lambda_is_default);
        assert_eq!(cloud.lambda, DEFAULT_WAVELENGTH);
        assert_relative_eq!(cloud.r_l, 20.0 * UM, max_relative = 1e-14);
    }

    #[test]
    fn underdetermined_specs() {
        let only_n = CloudSpec {
            n_atoms: Some(10.0),
            r_perp: Some(UM),
            ..Default::default()
        };
        assert!(matches!(make_cloud(&only_n), Err(Error::Underdetermined(_))));
        let degenerate = CloudSpec {
            optical_depth: Some(3.0),
            ..only_n
        };
        assert!(matches!(make_cloud(&degenerate), Err(Error::Underdetermined(_))));
        let no_radius = CloudSpec {
            n_atoms: Some(10.0),
            density: Some(1e16),
            ..Default::default()
        };
        assert!(matches!(make_cloud(&no_radius), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn overdetermined_specs_are_checked() {
        let base = make_cloud(&CloudSpec {
            density: Some(5e16),
            optical_depth: Some(20.0),
            r_perp: Some(25.0 * UM),
            ..Default::default()
        })
        .unwrap();
        let consistent = CloudSpec {
            density: Some(5e16),
            optical_depth: Some(20.0),
            r_l: Some(base.r_l * (1.0 + 5e-4)),
            r_perp: Some(25.0 * UM),
            ..Default::default()
        };
        assert!(make_cloud(&consistent).is_ok());
        let conflicting = CloudSpec {
            r_l: Some(base.r_l * 1.01),
            ..consistent
        };
        assert!(matches!(
            make_cloud(&conflicting),
            Err(Error::Inconsistent {
                field: "optical_depth",
                ..
            })
        ));
        let bad_m = CloudSpec {
            r_perp: Some(UM),
            r_l: Some(2.0 * UM),
            m: Some(5.0),
            n_atoms: Some(3.0),
            ..Default::default()
        };
        assert!(matches!(
            make_cloud(&bad_m),
            Err(Error::Inconsistent { field: "r_l", .. })
        ));
    }

    #[test]
    fn non_positive_inputs_rejected() {
        let spec = CloudSpec {
            n_atoms: Some(-1.0),
            r_perp: Some(UM),
            r_l: Some(UM),
            ..Default::default()
        };
        assert!(matches!(make_cloud(&spec), Err(Error::Invalid(_))));
    }

    #[test]
    fn doubling_wavelength_quadruples_optical_depth() {
        let spec = CloudSpec {
            n_atoms: Some(1e5),
            r_perp: Some(20.0 * UM),
            r_l: Some(200.0 * UM),
            lambda: Some(780e-9),
            ..Default::default()
        };
        let a = make_cloud(&spec).unwrap();
        let b = make_cloud(&CloudSpec {
            lambda: Some(1560e-9),
            ..spec
        })
        .unwrap();
        assert_relative_eq!(b.sigma(), 4.0 * a.sigma(), max_relative = 1e-14);
        assert_relative_eq!(b.optical_depth(), 4.0 * a.optical_depth(), max_relative = 1e-14);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cloud = make_cloud(&CloudSpec {
            n_atoms: Some(50.0),
            r_perp: Some(UM),
            r_l: Some(3.0 * UM),
            ..Default::default()
        })
        .unwrap();
        let a = sample_positions(&cloud, 7);
        let b = sample_positions(&cloud, 7);
        let c = sample_positions(&cloud, 8);
        let d = sample_positions_stream(&cloud, 7, 1);
        assert_eq!(a.points, b.points);
        assert_ne!(a.points, c.points);
        assert_ne!(a.points, d.points);
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn sample_moments() {
        let r_perp = 2.0;
        let r_l = 5.0;
        let cloud = CloudGeometry {
            r_perp,
            r_l,
            lambda: 1.0,
            n_exact: 1e4,
            lambda_is_default: false,
        };
        let pos = sample_positions(&cloud, 2024);
        let n = pos.len() as f64;
        for (axis, radius) in [(0, r_perp), (1, r_perp), (2, r_l)] {
            let var_true = radius * radius / 2.0;
            let mean = pos.points.iter().map(|p| p[axis]).sum::<f64>() / n;
            let var = pos.points.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            // standard error of a Gaussian sample variance is var sqrt(2/(n-1))
            let se_var = var_true * (2.0 / (n - 1.0)).sqrt();
            assert!(
                (var - var_true).abs() < 5.0 * se_var,
                "axis {axis}: {var} vs {var_true}"
            );
            let se_mean = (var_true / n).sqrt();
            assert!(mean.abs() < 5.0 * se_mean, "axis {axis}: mean {mean}");
        }
    }

    #[test]
    fn two_point_stats() {
        let cloud = CloudGeometry {
            r_perp: 1.0,
            r_l: 1.0,
            lambda: 1.0,
            n_exact: 2.0,
            lambda_is_default: false,
        };
        let pos = AtomPositions {
            points: vec![[0.0, 0.0, 0.0], [0.0, 0.3, 0.4]],
            seed: 0,
            stream: 0,
            cloud,
        };
        let stats = cross_section_stats(&pos).unwrap();
        assert_relative_eq!(stats.nearest_neighbor[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(stats.nearest_neighbor[1], 0.5, epsilon = 1e-15);
        assert_eq!(stats.near_field_pairs, 0);
    }

    #[test]
    fn dense_cloud_reports_near_field_pairs() {
        let cloud = CloudGeometry {
            r_perp: 1e-3,
            r_l: 1e-3,
            lambda: 1.0,
            n_exact: 200.0,
            lambda_is_default: false,
        };
        let pos = sample_positions(&cloud, 1);
        let stats = cross_section_stats(&pos).unwrap();
        // brute-force pair count
        let k = cloud.k_p();
        let mut expected = 0;
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                if k * kernels::norm(&kernels::sub(&pos.points[i], &pos.points[j])) < DEFAULT_G_CUTOFF {
                    expected += 1;
                }
            }
        }
        assert!(expected > 0);
        assert_eq!(stats.near_field_pairs, expected);
        assert!(stats.min_xi < DEFAULT_G_CUTOFF);
    }

    #[test]
    fn single_point_rejected() {
        let cloud = CloudGeometry {
            r_perp: 1.0,
            r_l: 1.0,
            lambda: 1.0,
            n_exact: 1.0,
            lambda_is_default: false,
        };
        let pos = sample_positions(&cloud, 0);
        assert_eq!(
            cross_section_stats(&pos),
            Err(Error::TooFewPoints("cross_section_stats"))
        );
    }
}
