use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Cluster statistics. Defaults follow the 28 GHz New York City campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Mean of the Poisson cluster count (before the max with 1).
    pub lambda_clusters: f64,
    pub max_subpaths: usize,
    /// Per-cluster rms angular spread, applied to azimuth and elevation.
    pub rms_angle_spread_deg: f64,
    /// Central elevations are uniform in `[-sector, sector]`.
    pub elevation_sector_deg: f64,
    /// Cluster power law `U^(r-1) · 10^(-Z/10)`: the exponent `r`.
    pub power_decay_exponent: f64,
    /// Standard deviation of `Z` (dB).
    pub power_fluctuation_db: f64,
    pub cluster_delay_mean_s: f64,
    pub subpath_delay_mean_s: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            lambda_clusters: 1.8,
            max_subpaths: 10,
            rms_angle_spread_deg: 10.0,
            elevation_sector_deg: 45.0,
            power_decay_exponent: 2.8,
            power_fluctuation_db: 4.0,
            cluster_delay_mean_s: 50e-9,
            subpath_delay_mean_s: 5e-9,
        }
    }
}

/// Azimuth/elevation pair (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Angles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Angles {
    pub const BORESIGHT: Angles = Angles {
        azimuth: 0.0,
        elevation: 0.0,
    };

    pub const fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subpath {
    /// Fraction of the link power carried by this subpath.
    pub power_fraction: f64,
    pub aoa: Angles,
    pub aod: Angles,
    pub delay_s: f64,
    /// Arrival angle relative to the direction of motion (rad).
    pub motion_angle: f64,
}

impl Subpath {
    /// `sqrt(P) · exp(2πi·f_d·cos(ω)·t − 2πi·τ·f)`.
    pub fn fading(&self, doppler_hz: f64, t: f64, f: f64) -> Complex64 {
        let amplitude = self.power_fraction.sqrt();
        if t == 0.0 && f == 0.0 {
            return Complex64::new(amplitude, 0.0);
        }
        let phase = TAU * (doppler_hz * self.motion_angle.cos() * t - self.delay_s * f);
        Complex64::from_polar(amplitude, phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub power_fraction: f64,
    pub central_aoa: Angles,
    pub central_aod: Angles,
    pub delay_s: f64,
    pub subpaths: Vec<Subpath>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// Total number of subpaths across all clusters.
    pub fn total_subpaths(&self) -> usize {
        self.clusters.iter().map(|c| c.subpaths.len()).sum()
    }

    pub fn subpaths(&self) -> impl Iterator<Item = &Subpath> {
        self.clusters.iter().flat_map(|c| c.subpaths.iter())
    }
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}

/// Draws `K = max(Poisson(λ), 1)` clusters with `L_k ~ U{1..max}` subpaths.
///
/// Cluster powers decay as `U^(r-1)·10^(-Z/10)` and are split uniformly over
/// the subpaths; all subpath fractions sum to one. Subpath angles are wrapped
/// Gaussian around the cluster center.
pub fn sample_clusters<R: Rng + ?Sized>(p: &ClusterParams, rng: &mut R) -> ClusterSet {
    let count = Poisson::new(p.lambda_clusters)
        .expect("lambda validated positive")
        .sample(rng)
        .max(1.0) as usize;
    let spread = p.rms_angle_spread_deg.to_radians();
    let sector = p.elevation_sector_deg.to_radians();
    let fluctuation = Normal::new(0.0, p.power_fluctuation_db).expect("finite spread");
    let angle_noise = Normal::new(0.0, spread).expect("finite spread");
    let cluster_delay = Exp::new(1.0 / p.cluster_delay_mean_s).expect("positive delay");
    let subpath_delay = Exp::new(1.0 / p.subpath_delay_mean_s).expect("positive delay");

    let central = |rng: &mut R| {
        Angles::new(
            rng.random_range(-PI..PI),
            rng.random_range(-sector..=sector),
        )
    };
    let mut clusters: Vec<Cluster> = (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let z = fluctuation.sample(rng);
            let power = u.powf(p.power_decay_exponent - 1.0) * 10f64.powf(-0.1 * z);
            let central_aoa = central(rng);
            let central_aod = central(rng);
            let delay_s = cluster_delay.sample(rng);
            let n_sub = rng.random_range(1..=p.max_subpaths.max(1));
            let jitter = |c: Angles, rng: &mut R| {
                Angles::new(
                    wrap_angle(c.azimuth + angle_noise.sample(rng)),
                    (c.elevation + angle_noise.sample(rng)).clamp(-FRAC_PI_2, FRAC_PI_2),
                )
            };
            let subpaths = (0..n_sub)
                .map(|_| {
                    let aoa = jitter(central_aoa, rng);
                    let aod = jitter(central_aod, rng);
                    Subpath {
                        power_fraction: 0.0,
                        aoa,
                        aod,
                        delay_s: delay_s + subpath_delay.sample(rng),
                        motion_angle: aoa.azimuth,
                    }
                })
                .collect();
            Cluster {
                power_fraction: power,
                central_aoa,
                central_aod,
                delay_s,
                subpaths,
            }
        })
        .collect();

    let total: f64 = clusters.iter().map(|c| c.power_fraction).sum();
    for c in &mut clusters {
        // a degenerate draw (all powers underflowing) falls back to equal split
        c.power_fraction = if total > 0.0 {
            c.power_fraction / total
        } else {
            1.0 / count as f64
        };
        let share = c.power_fraction / c.subpaths.len() as f64;
        for sp in &mut c.subpaths {
            sp.power_fraction = share;
        }
    }
    let sum: f64 = clusters
        .iter()
        .flat_map(|c| c.subpaths.iter())
        .map(|s| s.power_fraction)
        .sum();
    for sp in clusters.iter_mut().flat_map(|c| c.subpaths.iter_mut()) {
        sp.power_fraction /= sum;
    }
    ClusterSet { clusters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn structural_invariants_hold() {
        let p = ClusterParams::default();
        let mut r = rng::stream(5, &[]);
        for _ in 0..2000 {
            let set = sample_clusters(&p, &mut r);
            assert!(!set.clusters.is_empty());
            for c in &set.clusters {
                assert!((1..=10).contains(&c.subpaths.len()));
                for sp in &c.subpaths {
                    assert!(sp.delay_s >= 0.0);
                    assert!((-PI..PI).contains(&sp.aoa.azimuth));
                    assert!(sp.aod.elevation.abs() <= FRAC_PI_2);
                }
            }
            let total: f64 = set.subpaths().map(|s| s.power_fraction).sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn same_stream_same_clusters() {
        let p = ClusterParams::default();
        let a = sample_clusters(&p, &mut rng::stream(9, &[1]));
        let b = sample_clusters(&p, &mut rng::stream(9, &[1]));
        assert_eq!(a, b);
    }

    #[test]
    fn wrap_keeps_range() {
        assert!((wrap_angle(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(-PI - 0.1) - (PI - 0.1)).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fading_at_origin_is_real_amplitude() {
        let sp = Subpath {
            power_fraction: 0.25,
            aoa: Angles::BORESIGHT,
            aod: Angles::BORESIGHT,
            delay_s: 30e-9,
            motion_angle: 0.7,
        };
        let g = sp.fading(2000.0, 0.0, 0.0);
        assert_eq!(g, Complex64::new(0.5, 0.0));
    }
}
