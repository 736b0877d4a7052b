//! Closed-form connectivity model and throughput.
//!
//! With nodes spaced by exponential gaps of rate `ρ`, a vehicle that realigns
//! its beam every `T` seconds starts a slot connected with probability
//! [`p_start`], keeps its node for the whole slot with probability
//! [`p_no_leave`], and otherwise communicates for [`e_tl`] seconds on average
//! before overtaking it. The throughput is the rate at the mean inter-node
//! distance scaled by the fraction of the slot spent communicating.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelError;
use crate::coverage::{ArrayConfig, CoverageTable};
use crate::link::{evaluate_link, INTERFERENCE_OUTAGE_EPS};
use crate::rng;
use crate::units::{kmh_to_ms, per_km_to_per_m, ScenarioParams};

/// Practical modulation limit on spectral efficiency (b/s/Hz).
pub const SPECTRAL_EFFICIENCY_CAP: f64 = 7.4;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("the mean leave time is undefined for a stationary vehicle")]
    Stationary,
    #[error("{name} must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("no coverage radius for rho = {rho_per_km} nodes/km with arrays {bs}/{veh}")]
    MissingCoverage {
        rho_per_km: f64,
        bs: String,
        veh: String,
    },
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// `1 − e^{−2ρR}`.
pub fn p_start(rho: f64, r_comm: f64) -> f64 {
    -(-2.0 * rho * r_comm).exp_m1()
}

/// `(e^{−ρTV} − e^{−ρR}) / (1 − e^{−ρR})`, clamped to zero once the vehicle
/// covers at least `R` within a slot.
pub fn p_no_leave(rho: f64, r_comm: f64, v: f64, t_rto: f64) -> f64 {
    let travel = v * t_rto;
    if travel >= r_comm {
        log::warn!("v·T = {travel} m reaches the coverage radius {r_comm} m; no slot survives");
        return 0.0;
    }
    // (e^{-a} - e^{-b}) / (1 - e^{-b}) with a < b, written to keep precision
    let (a, b) = (rho * travel, rho * r_comm);
    if b == 0.0 {
        // uniform limit of an empty network
        return 1.0 - travel / r_comm;
    }
    ((-a).exp() * -(a - b).exp_m1() / -(-b).exp_m1()).clamp(0.0, 1.0)
}

pub fn p_nl(p_start: f64, p_no_leave: f64) -> f64 {
    p_start * p_no_leave
}

/// Which closed form of the mean leave time to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeaveTimeForm {
    /// Conditional mean of `d/V` given `d < TV`.
    #[default]
    Conditional,
    /// The same expression multiplied by `1 − e^{−ρR}`; kept for
    /// comparison with older results.
    Printed,
}

/// `1 − e^{−x}(1 + x)`, accurate for small `x`.
fn truncated_first_moment(x: f64) -> f64 {
    if x < 0.5 {
        // Σ_{k≥2} (−1)^k (k−1) x^k / k!
        let mut term = x * x / 2.0;
        let mut sum = 0.0f64;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs().max(f64::MIN_POSITIVE) {
            sum += (k - 1.0) * term;
            k += 1.0;
            term *= -x / k;
        }
        sum
    } else {
        -(-x).exp_m1() - x * (-x).exp()
    }
}

/// Mean time before a connected vehicle overtakes its node, given that it
/// does so within the slot.
///
/// The travel distance is truncated at `R` when `v·T ≥ R`.
pub fn e_tl(rho: f64, r_comm: f64, v: f64, t_rto: f64) -> Result<f64, AnalyticsError> {
    e_tl_form(rho, r_comm, v, t_rto, LeaveTimeForm::Conditional)
}

pub fn e_tl_form(
    rho: f64,
    r_comm: f64,
    v: f64,
    t_rto: f64,
    form: LeaveTimeForm,
) -> Result<f64, AnalyticsError> {
    if v <= 0.0 {
        return Err(AnalyticsError::Stationary);
    }
    let travel = (v * t_rto).min(r_comm);
    let x = rho * travel;
    if x == 0.0 {
        return Ok(match form {
            LeaveTimeForm::Conditional => travel / (2.0 * v),
            LeaveTimeForm::Printed => 0.0,
        });
    }
    let conditional = truncated_first_moment(x) / (rho * -(-x).exp_m1()) / v;
    Ok(match form {
        LeaveTimeForm::Conditional => conditional,
        LeaveTimeForm::Printed => conditional * -(-rho * r_comm).exp_m1(),
    })
}

/// `P_start · [P_noleave · T + (1 − P_noleave) · E[T_L]]`.
pub fn e_tcomm(p_start: f64, p_no_leave: f64, e_tl: f64, t_rto: f64) -> f64 {
    p_start * (p_no_leave * t_rto + (1.0 - p_no_leave) * e_tl)
}

/// `W · min(log₂(1 + SINR), cap)`; non-positive SINR gives zero.
pub fn shannon_rate(bandwidth: f64, sinr_linear: f64, cap: f64) -> f64 {
    if sinr_linear <= 0.0 {
        return 0.0;
    }
    bandwidth * (sinr_linear.ln_1p() / std::f64::consts::LN_2).min(cap)
}

/// Where the vehicle sits relative to its serving node when sampling rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateDistance {
    /// Fixed at `min(1/ρ, R)`.
    #[default]
    Mean,
    /// Exponential with rate `ρ`, conditioned below `R`.
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSettings {
    pub samples: usize,
    pub cap: f64,
    pub distance: RateDistance,
}

impl Default for RateSettings {
    fn default() -> Self {
        Self {
            samples: 20_000,
            cap: SPECTRAL_EFFICIENCY_CAP,
            distance: RateDistance::Mean,
        }
    }
}

/// Monte Carlo mean of the capped Shannon rate between a vehicle and its
/// serving node, with a fresh Poisson field of interferers per sample.
pub fn mean_rate(
    params: &ScenarioParams,
    r_comm: f64,
    settings: &RateSettings,
    seed: u64,
) -> Result<f64, AnalyticsError> {
    let rho = params.rho;
    if !(rho > 0.0) {
        return Err(AnalyticsError::InvalidParameter {
            name: "rho",
            value: rho,
            requirement: "positive",
        });
    }
    if settings.samples == 0 {
        return Err(AnalyticsError::InvalidParameter {
            name: "samples",
            value: 0.0,
            requirement: "at least one",
        });
    }
    let horizon = params
        .channel
        .states
        .outage_horizon(INTERFERENCE_OUTAGE_EPS);
    let field = Poisson::new(2.0 * rho * horizon).expect("positive mean");
    let rates = (0..settings.samples as u64)
        .into_par_iter()
        .map(|i| {
            // the serving link gets its own stream so that sample i sees the
            // same serving draws at every density
            let mut rng = rng::stream(seed, &[i, 0]);
            let mut link_rng = rng::stream(seed, &[i, 1]);
            let d = match settings.distance {
                RateDistance::Mean => (1.0 / rho).min(r_comm),
                RateDistance::Averaged => {
                    // inverse CDF of Exp(ρ) restricted to [0, R]
                    let u: f64 = rng.random();
                    -(u * (-rho * r_comm).exp_m1()).ln_1p() / rho
                }
            };
            let count = field.sample(&mut rng) as usize;
            let mut nodes: Vec<f64> = (0..count)
                .map(|_| d + rng.random_range(-horizon..horizon))
                .chain(std::iter::once(0.0))
                .collect();
            nodes.sort_by(f64::total_cmp);
            let serving = nodes
                .iter()
                .position(|&x| x == 0.0)
                .expect("serving node present");
            let link = evaluate_link(params, d, &nodes, serving, &mut link_rng)?;
            Ok(shannon_rate(
                params.bandwidth,
                link.sinr_linear(),
                settings.cap,
            ))
        })
        .collect::<Result<Vec<f64>, AnalyticsError>>()?;
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Every closed-form quantity at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectivityMetrics {
    pub p_start: f64,
    pub p_no_leave_given_start: f64,
    pub p_nl: f64,
    /// Zero for a stationary vehicle, which never leaves.
    pub e_tl_s: f64,
    pub e_tcomm_s: f64,
    pub duration_ratio: f64,
    pub rate_bps: f64,
    pub throughput_bps: f64,
}

impl ConnectivityMetrics {
    /// Closed forms at density `rho` (1/m), radius `r_comm` (m), speed `v`
    /// (m/s) and slot `t_rto` (s), with throughput from `rate_bps`.
    pub fn evaluate(rho: f64, r_comm: f64, v: f64, t_rto: f64, rate_bps: f64) -> Self {
        let ps = p_start(rho, r_comm);
        let pnl_given = p_no_leave(rho, r_comm, v, t_rto);
        let tl = e_tl(rho, r_comm, v, t_rto).unwrap_or(0.0);
        let tcomm = e_tcomm(ps, pnl_given, tl, t_rto);
        let ratio = tcomm / t_rto;
        Self {
            p_start: ps,
            p_no_leave_given_start: pnl_given,
            p_nl: p_nl(ps, pnl_given),
            e_tl_s: tl,
            e_tcomm_s: tcomm,
            duration_ratio: ratio,
            rate_bps,
            throughput_bps: rate_bps * ratio,
        }
    }
}

/// One operating point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub rho_per_km: f64,
    pub speed_kmh: f64,
    pub slot_s: f64,
    pub arrays: ArrayConfig,
}

/// Where sweep points get their coverage radius.
#[derive(Debug, Clone, Copy)]
pub enum RcommSource<'a> {
    Fixed(f64),
    Table(&'a CoverageTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub point: GridPoint,
    pub r_comm_m: f64,
    pub metrics: ConnectivityMetrics,
}

fn resolve_r_comm(point: &GridPoint, source: RcommSource) -> Result<f64, AnalyticsError> {
    match source {
        RcommSource::Fixed(r) => Ok(r),
        RcommSource::Table(t) => t.r_comm(point.rho_per_km, point.arrays).ok_or_else(|| {
            AnalyticsError::MissingCoverage {
                rho_per_km: point.rho_per_km,
                bs: point.arrays.bs.to_string(),
                veh: point.arrays.veh.to_string(),
            }
        }),
    }
}

/// Evaluates every grid point. Rates are computed once per distinct
/// (density, arrays, radius) triple; all triples of one array configuration
/// share their random streams.
pub fn metrics_sweep(
    points: &[GridPoint],
    base: &ScenarioParams,
    source: RcommSource,
    rate: &RateSettings,
    seed: u64,
) -> Result<Vec<MetricsRow>, AnalyticsError> {
    if points.is_empty() {
        return Err(AnalyticsError::EmptyGrid);
    }
    let radii = points
        .iter()
        .map(|p| resolve_r_comm(p, source))
        .collect::<Result<Vec<_>, _>>()?;

    type RateKey = (u64, [usize; 4], u64);
    let key = |p: &GridPoint, r: f64| -> RateKey {
        let a = p.arrays;
        (
            p.rho_per_km.to_bits(),
            [a.bs.rows, a.bs.cols, a.veh.rows, a.veh.cols],
            r.to_bits(),
        )
    };
    let mut unique: Vec<(RateKey, &GridPoint, f64)> = Vec::new();
    for (p, &r) in points.iter().zip(&radii) {
        let k = key(p, r);
        if !unique.iter().any(|(u, _, _)| *u == k) {
            unique.push((k, p, r));
        }
    }
    let rates = unique
        .iter()
        .map(|(k, p, r)| {
            let params = base
                .with_density(per_km_to_per_m(p.rho_per_km))
                .with_arrays(p.arrays.bs, p.arrays.veh);
            // common random numbers across densities and radii keep the
            // rate curve of one configuration smooth
            let stream_seed = rng::derive_seed(
                seed,
                &[k.1[0] as u64, k.1[1] as u64, k.1[2] as u64, k.1[3] as u64],
            );
            mean_rate(&params, *r, rate, stream_seed).map(|v| (*k, v))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(points
        .iter()
        .zip(&radii)
        .map(|(p, &r)| {
            let k = key(p, r);
            let rate_bps = rates
                .iter()
                .find(|(u, _)| *u == k)
                .map(|(_, v)| *v)
                .expect("rate computed");
            MetricsRow {
                point: *p,
                r_comm_m: r,
                metrics: ConnectivityMetrics::evaluate(
                    per_km_to_per_m(p.rho_per_km),
                    r,
                    kmh_to_ms(p.speed_kmh),
                    p.slot_s,
                    rate_bps,
                ),
            }
        })
        .collect())
}

/// A row of the connectivity CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub rho_per_km: f64,
    pub speed_kmh: f64,
    pub slot_s: f64,
    pub bs_elems: usize,
    pub veh_elems: usize,
    pub r_comm_m: f64,
    pub p_start: f64,
    pub p_no_leave: f64,
    pub p_nl: f64,
    pub e_tl_s: f64,
    pub e_tcomm_s: f64,
    pub duration_ratio: f64,
    pub rate_bps: f64,
    pub throughput_bps: f64,
}

impl From<&MetricsRow> for MetricsRecord {
    fn from(r: &MetricsRow) -> Self {
        let m = &r.metrics;
        Self {
            rho_per_km: r.point.rho_per_km,
            speed_kmh: r.point.speed_kmh,
            slot_s: r.point.slot_s,
            bs_elems: r.point.arrays.bs.elements(),
            veh_elems: r.point.arrays.veh.elements(),
            r_comm_m: r.r_comm_m,
            p_start: m.p_start,
            p_no_leave: m.p_no_leave_given_start,
            p_nl: m.p_nl,
            e_tl_s: m.e_tl_s,
            e_tcomm_s: m.e_tcomm_s,
            duration_ratio: m.duration_ratio,
            rate_bps: m.rate_bps,
            throughput_bps: m.throughput_bps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn p_start_examples() {
        assert!(close(p_start(0.01, 100.0), 1.0 - (-2f64).exp(), 1e-15));
        assert!(close(p_start(0.01, 100.0), 0.86466, 5e-6));
        assert_eq!(p_start(0.0, 100.0), 0.0);
        assert_eq!(p_start(0.01, f64::INFINITY), 1.0);
    }

    #[test]
    fn p_no_leave_examples() {
        assert_eq!(p_no_leave(0.01, 100.0, 0.0, 0.2), 1.0);
        assert_eq!(p_no_leave(0.01, 100.0, 500.0, 0.2), 0.0);
        let direct = ((-0.05f64).exp() - (-1f64).exp()) / (1.0 - (-1f64).exp());
        let p = p_no_leave(0.01, 100.0, 25.0, 0.2);
        assert!(close(p, direct, 1e-15));
        assert!(close(p, 0.9228, 5e-5));
    }

    #[test]
    fn p_nl_examples() {
        assert_eq!(p_nl(1.0, 1.0), 1.0);
        assert!(close(p_nl(0.86466, 0.9228), 0.79791, 5e-6));
    }

    #[test]
    fn e_tl_examples() {
        let direct = (1.0 - (-0.05f64).exp() * 1.05) / (0.01 * (1.0 - (-0.05f64).exp())) / 25.0;
        let t = e_tl(0.01, 100.0, 25.0, 0.2).unwrap();
        assert!(close(t, direct, 1e-14));
        assert!(close(t, 0.099167, 5e-7));
        assert_eq!(e_tl(0.01, 100.0, 0.0, 0.2), Err(AnalyticsError::Stationary));
        let tiny = e_tl(1e-9, 100.0, 25.0, 0.2).unwrap();
        assert!(close(tiny, 0.1, 1e-9));
        let printed = e_tl_form(0.01, 100.0, 25.0, 0.2, LeaveTimeForm::Printed).unwrap();
        assert!(close(printed, t * (1.0 - (-1f64).exp()), 1e-15));
    }

    fn exponential_below(rho: f64, limit: f64, rng: &mut crate::rng::SimRng) -> f64 {
        let u: f64 = rand::Rng::random(rng);
        -(u * (-rho * limit).exp_m1()).ln_1p() / rho
    }

    #[test]
    fn e_tl_matches_truncated_exponential_sampling() {
        let (rho, v, t) = (0.01, 25.0, 0.2);
        let mut r = crate::rng::stream(41, &[]);
        let samples: Vec<f64> = (0..1_000_000)
            .map(|_| exponential_below(rho, v * t, &mut r) / v)
            .collect();
        let (m, se) = (crate::stats::mean(&samples), crate::stats::std_error(&samples));
        let closed = e_tl(rho, 100.0, v, t).unwrap();
        assert!((m - closed).abs() <= 3.0 * se, "{m} vs {closed} (se {se})");
    }

    #[test]
    fn p_no_leave_matches_truncated_exponential_sampling() {
        let (rho, r_comm, v, t) = (0.01, 100.0, 25.0, 0.2);
        let mut r = crate::rng::stream(42, &[]);
        let hits: Vec<f64> = (0..1_000_000)
            .map(|_| f64::from(exponential_below(rho, r_comm, &mut r) > v * t))
            .collect();
        let (m, se) = (crate::stats::mean(&hits), crate::stats::std_error(&hits));
        let closed = p_no_leave(rho, r_comm, v, t);
        assert!((m - closed).abs() <= 3.0 * se, "{m} vs {closed} (se {se})");
    }

    #[test]
    fn e_tcomm_examples() {
        assert!(close(e_tcomm(0.7, 1.0, 0.05, 0.2), 0.14, 1e-15));
        assert_eq!(e_tcomm(0.0, 0.3, 0.05, 0.2), 0.0);
        let (ps, pn) = (p_start(0.01, 100.0), p_no_leave(0.01, 100.0, 25.0, 0.2));
        let v = e_tcomm(ps, pn, e_tl(0.01, 100.0, 25.0, 0.2).unwrap(), 0.2);
        assert!(close(v, 0.166206, 5e-7));
    }

    #[test]
    fn series_and_direct_forms_agree_at_the_switch() {
        let below: f64 = 0.5 - 1e-12;
        let direct = 1.0 - (-below).exp() * (1.0 + below);
        assert!(close(truncated_first_moment(below), direct, 1e-15));
        assert!(close(
            truncated_first_moment(0.499_999),
            1.0 - (-0.499_999f64).exp() * 1.499_999,
            1e-14
        ));
    }

    #[test]
    fn shannon_examples() {
        assert_eq!(shannon_rate(1e9, 0.0, SPECTRAL_EFFICIENCY_CAP), 0.0);
        assert!(close(
            shannon_rate(1e9, 1.0, SPECTRAL_EFFICIENCY_CAP),
            1e9,
            1e-3
        ));
        assert!(close(
            shannon_rate(1e9, 1e6, SPECTRAL_EFFICIENCY_CAP),
            7.4e9,
            1e-3
        ));
    }

    #[test]
    fn throughput_composition() {
        let m = ConnectivityMetrics::evaluate(0.01, 1e6, 0.0, 0.2, 1e9);
        assert!(close(m.duration_ratio, 1.0, 1e-12));
        assert!(close(m.throughput_bps, 1e9, 1e-3));
        let zero = ConnectivityMetrics::evaluate(0.0, 100.0, 25.0, 0.2, 1e9);
        assert_eq!(zero.throughput_bps, 0.0);
    }

    #[test]
    fn missing_coverage_names_the_point() {
        let table = CoverageTable::default();
        let point = GridPoint {
            rho_per_km: 30.0,
            speed_kmh: 90.0,
            slot_s: 0.2,
            arrays: ArrayConfig::new((8, 8), (4, 4)),
        };
        let err = metrics_sweep(
            &[point],
            &ScenarioParams::default(),
            RcommSource::Table(&table),
            &RateSettings::default(),
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("rho = 30"));
        assert!(err.to_string().contains("8x8/4x4"));
    }

    proptest! {
        #[test]
        fn bounds_and_identities(
            rho in 1e-4f64..0.2,
            r in 10.0f64..400.0,
            v in 0.1f64..40.0,
            t in 0.01f64..1.0,
        ) {
            prop_assume!(v * t < r);
            let m = ConnectivityMetrics::evaluate(rho, r, v, t, 1e9);
            for p in [m.p_start, m.p_no_leave_given_start, m.p_nl] {
                prop_assert!((0.0..=1.0).contains(&p));
            }
            prop_assert!(m.p_nl <= m.p_start);
            prop_assert!(m.e_tl_s > 0.0 && m.e_tl_s < t);
            prop_assert!((0.0..=1.0).contains(&m.duration_ratio));
        }

        #[test]
        fn monotonicity(
            rho in 1e-4f64..0.2,
            r in 10.0f64..400.0,
            v in 0.1f64..20.0,
            t in 0.01f64..0.5,
            k in 1.01f64..2.0,
        ) {
            prop_assert!(p_start(rho * k, r) >= p_start(rho, r));
            prop_assert!(p_start(rho, r * k) >= p_start(rho, r));
            prop_assert!(p_no_leave(rho, r, v * k, t) <= p_no_leave(rho, r, v, t));
            prop_assert!(p_no_leave(rho, r, v, t * k) <= p_no_leave(rho, r, v, t));
        }

        #[test]
        fn limits(r in 10.0f64..400.0, t in 0.01f64..1.0) {
            let sparse = ConnectivityMetrics::evaluate(1e-12, r, 20.0_f64.min(r / t / 2.0), t, 1e9);
            prop_assert!(sparse.p_start < 1e-9 && sparse.p_nl < 1e-9 && sparse.e_tcomm_s < 1e-9);
            let still = ConnectivityMetrics::evaluate(0.02, r, 1e-12, t, 1e9);
            prop_assert!((still.p_no_leave_given_start - 1.0).abs() < 1e-9);
            prop_assert!((still.e_tcomm_s - still.p_start * t).abs() < 1e-9);
        }
    }
}
