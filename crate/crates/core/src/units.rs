//! Physical quantities, unit conventions and the road scenario.
//!
//! Everything stored in [`ScenarioParams`] is SI (meters, seconds, hertz).
//! Quantities in dB or dBm carry the suffix in their field name. The external
//! JSON configuration uses the customary units (nodes/km, km/h, GHz) and is
//! converted once by [`convert_units`].

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    ChannelParams, ClusterParams, PathlossModel, PathlossParams, StateProbabilityParams,
};
use crate::rng;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn per_km_to_per_m(per_km: f64) -> f64 {
    per_km / 1000.0
}

pub fn per_m_to_per_km(per_m: f64) -> f64 {
    per_m * 1000.0
}

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

pub fn ms_to_kmh(ms: f64) -> f64 {
    ms * 3.6
}

/// Uniform planar array of `rows × cols` elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaArray {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    pub element_spacing_wavelengths: f64,
}

impl AntennaArray {
    /// Half-wavelength spaced array.
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            element_spacing_wavelengths: 0.5,
        }
    }

    pub const fn elements(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for AntennaArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Validated scenario, all SI.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    /// Infrastructure node density (nodes/m).
    pub rho: f64,
    /// Vehicle speed (m/s).
    pub speed: f64,
    /// Slot duration between beam realignments (s).
    pub slot_duration: f64,
    /// Carrier frequency (Hz).
    pub carrier_freq: f64,
    /// Total bandwidth (Hz).
    pub bandwidth: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub sinr_threshold_db: f64,
    pub bs_array: AntennaArray,
    pub veh_array: AntennaArray,
    /// Simulated road segment length (m).
    pub road_length: f64,
    pub channel: ChannelParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        convert_units(&RawConfig::default()).expect("default configuration is valid")
    }
}

impl ScenarioParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Maximum Doppler shift f·v/c (Hz).
    pub fn doppler_hz(&self) -> f64 {
        self.carrier_freq * self.speed / SPEED_OF_LIGHT
    }

    pub fn with_density(&self, rho: f64) -> Self {
        Self {
            rho,
            ..self.clone()
        }
    }

    pub fn with_arrays(&self, bs_array: AntennaArray, veh_array: AntennaArray) -> Self {
        Self {
            bs_array,
            veh_array,
            ..self.clone()
        }
    }
}

/// Optional overrides of the channel defaults, as found under `"channel"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_los_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_los: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_los_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_nlos_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_nlos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_nlos_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_clusters: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rms_angle_spread_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_out: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_out: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_los: Option<f64>,
}

/// The JSON configuration file, in external units.
///
/// Missing keys take the reference values (28 GHz, 1 GHz, 30 dBm, NF 5 dB,
/// −5 dB threshold, 8×8 / 4×4 arrays, 20 nodes/km, 90 km/h, 200 ms slots).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub rho_per_km: f64,
    pub speed_kmh: f64,
    pub slot_s: f64,
    pub fc_ghz: f64,
    pub bw_ghz: f64,
    pub ptx_dbm: f64,
    pub nf_db: f64,
    pub sinr_thresh_db: f64,
    pub bs_array: [usize; 2],
    pub veh_array: [usize; 2],
    pub road_m: f64,
    pub seed: u64,
    pub channel: ChannelOverrides,
    /// Fixed coverage radius used when no coverage table is supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_comm_m: Option<f64>,
    /// Density grid for sweeps (nodes/km).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densities_per_km: Option<Vec<f64>>,
    /// Monte Carlo trials per coverage cell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Slots per road simulation in validation runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<usize>,
    /// Interference realizations per mean-rate estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_samples: Option<usize>,
    /// Spectral efficiency cap (b/s/Hz).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_cap_bps_hz: Option<f64>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            rho_per_km: 20.0,
            speed_kmh: 90.0,
            slot_s: 0.2,
            fc_ghz: 28.0,
            bw_ghz: 1.0,
            ptx_dbm: 30.0,
            nf_db: 5.0,
            sinr_thresh_db: -5.0,
            bs_array: [8, 8],
            veh_array: [4, 4],
            road_m: 10_000.0,
            seed: 1,
            channel: ChannelOverrides::default(),
            r_comm_m: None,
            densities_per_km: None,
            trials: None,
            slots: None,
            rate_samples: None,
            se_cap_bps_hz: None,
        }
    }
}

/// One rejected configuration field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldIssue {
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {}", list_issues(.0))]
    InvalidConfig(Vec<FieldIssue>),
    #[error("road segment of {road_length} m is shorter than 10/rho = {min_length} m")]
    SegmentTooShort { road_length: f64, min_length: f64 },
}

fn list_issues(issues: &[FieldIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

struct Checker(Vec<FieldIssue>);

impl Checker {
    fn positive(&mut self, field: &'static str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.0.push(FieldIssue {
                field,
                reason: format!("must be a positive finite number, got {v}"),
            });
        }
    }

    fn non_negative(&mut self, field: &'static str, v: f64) {
        if !(v.is_finite() && v >= 0.0) {
            self.0.push(FieldIssue {
                field,
                reason: format!("must be a non-negative finite number, got {v}"),
            });
        }
    }

    fn finite(&mut self, field: &'static str, v: f64) {
        // -inf is allowed for the threshold only, checked by the caller
        if v.is_nan() || v == f64::INFINITY {
            self.0.push(FieldIssue {
                field,
                reason: format!("must be a number, got {v}"),
            });
        }
    }

    fn array(&mut self, field: &'static str, a: [usize; 2]) {
        if a[0] == 0 || a[1] == 0 {
            self.0.push(FieldIssue {
                field,
                reason: format!("rows and cols must be at least 1, got {a:?}"),
            });
        }
    }
}

/// Converts and validates an external configuration into SI parameters.
pub fn convert_units(raw: &RawConfig) -> Result<ScenarioParams, ScenarioError> {
    let mut c = Checker(Vec::new());
    c.positive("rho_per_km", raw.rho_per_km);
    c.non_negative("speed_kmh", raw.speed_kmh);
    c.positive("slot_s", raw.slot_s);
    c.positive("fc_ghz", raw.fc_ghz);
    c.positive("bw_ghz", raw.bw_ghz);
    c.finite("ptx_dbm", raw.ptx_dbm);
    c.finite("nf_db", raw.nf_db);
    c.finite("sinr_thresh_db", raw.sinr_thresh_db);
    c.array("bs_array", raw.bs_array);
    c.array("veh_array", raw.veh_array);
    c.positive("road_m", raw.road_m);

    let mut channel = ChannelParams::default();
    let o = &raw.channel;
    let mut set = |field: &'static str, target: &mut f64, v: Option<f64>, allow_zero: bool| {
        if let Some(v) = v {
            if allow_zero {
                c.non_negative(field, v);
            } else {
                c.positive(field, v);
            }
            *target = v;
        }
    };
    let PathlossModel { los, nlos } = &mut channel.pathloss;
    set(
        "channel.alpha_los_db",
        &mut los.alpha_db,
        o.alpha_los_db,
        true,
    );
    set("channel.beta_los", &mut los.beta, o.beta_los, false);
    set(
        "channel.sigma_los_db",
        &mut los.shadow_sigma_db,
        o.sigma_los_db,
        true,
    );
    set(
        "channel.alpha_nlos_db",
        &mut nlos.alpha_db,
        o.alpha_nlos_db,
        true,
    );
    set("channel.beta_nlos", &mut nlos.beta, o.beta_nlos, false);
    set(
        "channel.sigma_nlos_db",
        &mut nlos.shadow_sigma_db,
        o.sigma_nlos_db,
        true,
    );
    set(
        "channel.lambda_clusters",
        &mut channel.clusters.lambda_clusters,
        o.lambda_clusters,
        false,
    );
    set(
        "channel.rms_angle_spread_deg",
        &mut channel.clusters.rms_angle_spread_deg,
        o.rms_angle_spread_deg,
        true,
    );
    set("channel.a_out", &mut channel.states.a_out, o.a_out, false);
    set("channel.b_out", &mut channel.states.b_out, o.b_out, true);
    set("channel.a_los", &mut channel.states.a_los, o.a_los, false);

    if let Some(r) = raw.r_comm_m {
        c.positive("r_comm_m", r);
    }
    if let Some(cap) = raw.se_cap_bps_hz {
        c.positive("se_cap_bps_hz", cap);
    }
    if raw.rate_samples == Some(0) {
        c.0.push(FieldIssue {
            field: "rate_samples",
            reason: "must be at least 1".into(),
        });
    }
    if let Some(ds) = &raw.densities_per_km {
        if ds.is_empty() {
            c.0.push(FieldIssue {
                field: "densities_per_km",
                reason: "must not be empty".into(),
            });
        }
        for &d in ds {
            c.positive("densities_per_km", d);
        }
    }
    if !c.0.is_empty() {
        return Err(ScenarioError::InvalidConfig(c.0));
    }

    Ok(ScenarioParams {
        rho: per_km_to_per_m(raw.rho_per_km),
        speed: kmh_to_ms(raw.speed_kmh),
        slot_duration: raw.slot_s,
        carrier_freq: raw.fc_ghz * 1e9,
        bandwidth: raw.bw_ghz * 1e9,
        tx_power_dbm: raw.ptx_dbm,
        noise_figure_db: raw.nf_db,
        sinr_threshold_db: raw.sinr_thresh_db,
        bs_array: AntennaArray::new(raw.bs_array[0], raw.bs_array[1]),
        veh_array: AntennaArray::new(raw.veh_array[0], raw.veh_array[1]),
        road_length: raw.road_m,
        channel,
    })
}

/// Inverse of [`convert_units`]: expresses `p` back in external units.
pub fn to_raw(p: &ScenarioParams, seed: u64) -> RawConfig {
    let d = ChannelParams::default();
    let ch = &p.channel;
    let diff = |v: f64, default: f64| (v != default).then_some(v);
    let (
        PathlossParams {
            alpha_db: al,
            beta: bl,
            shadow_sigma_db: sl,
        },
        PathlossParams {
            alpha_db: an,
            beta: bn,
            shadow_sigma_db: sn,
        },
    ) = (ch.pathloss.los, ch.pathloss.nlos);
    let StateProbabilityParams {
        a_out,
        b_out,
        a_los,
    } = ch.states;
    let ClusterParams {
        lambda_clusters,
        rms_angle_spread_deg,
        ..
    } = ch.clusters;
    RawConfig {
        rho_per_km: per_m_to_per_km(p.rho),
        speed_kmh: ms_to_kmh(p.speed),
        slot_s: p.slot_duration,
        fc_ghz: p.carrier_freq / 1e9,
        bw_ghz: p.bandwidth / 1e9,
        ptx_dbm: p.tx_power_dbm,
        nf_db: p.noise_figure_db,
        sinr_thresh_db: p.sinr_threshold_db,
        bs_array: [p.bs_array.rows, p.bs_array.cols],
        veh_array: [p.veh_array.rows, p.veh_array.cols],
        road_m: p.road_length,
        seed,
        channel: ChannelOverrides {
            alpha_los_db: diff(al, d.pathloss.los.alpha_db),
            beta_los: diff(bl, d.pathloss.los.beta),
            sigma_los_db: diff(sl, d.pathloss.los.shadow_sigma_db),
            alpha_nlos_db: diff(an, d.pathloss.nlos.alpha_db),
            beta_nlos: diff(bn, d.pathloss.nlos.beta),
            sigma_nlos_db: diff(sn, d.pathloss.nlos.shadow_sigma_db),
            lambda_clusters: diff(lambda_clusters, d.clusters.lambda_clusters),
            rms_angle_spread_deg: diff(rms_angle_spread_deg, d.clusters.rms_angle_spread_deg),
            a_out: diff(a_out, d.states.a_out),
            b_out: diff(b_out, d.states.b_out),
            a_los: diff(a_los, d.states.a_los),
        },
        ..RawConfig::default()
    }
}

/// One realization of the road: node positions and the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Drop {
    /// Infrastructure node coordinates along the road (m), ascending.
    pub in_positions: Vec<f64>,
    /// Vehicle coordinate (m).
    pub an_position: f64,
    pub rng_seed: u64,
}

impl Drop {
    /// Indices `[lo, hi)` of the nodes within `radius` of `x`.
    pub fn nodes_within(&self, x: f64, radius: f64) -> std::ops::Range<usize> {
        let lo = self.in_positions.partition_point(|&p| p < x - radius);
        let hi = self.in_positions.partition_point(|&p| p <= x + radius);
        lo..hi
    }
}

/// Draws a Poisson deployment of density `params.rho` on `[0, road_length]`
/// and places the vehicle uniformly in the central third of the segment.
pub fn sample_drop(params: &ScenarioParams, seed: u64) -> Result<Drop, ScenarioError> {
    let min_length = 10.0 / params.rho;
    if params.road_length < min_length {
        return Err(ScenarioError::SegmentTooShort {
            road_length: params.road_length,
            min_length,
        });
    }
    let mut rng = rng::stream(seed, &[0xd209]);
    let gaps = Exp::new(params.rho).expect("rho validated positive");
    let mut in_positions = Vec::with_capacity((params.rho * params.road_length * 1.2) as usize + 8);
    let mut x = gaps.sample(&mut rng);
    while x <= params.road_length {
        in_positions.push(x);
        x += gaps.sample(&mut rng);
    }
    let third = params.road_length / 3.0;
    let an_position = third + rng.random::<f64>() * third;
    Ok(Drop {
        in_positions,
        an_position,
        rng_seed: seed,
    })
}
