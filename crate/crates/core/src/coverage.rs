//! Monte Carlo estimation of the mean coverage radius of a node.
//!
//! A trial drops nodes and a vehicle, picks the node that offers the vehicle
//! the best SINR after optimal beamforming, and then slides the vehicle
//! away from it. The trial radius is the largest offset at which the SINR,
//! averaged in linear scale over independent channel redraws, still meets the
//! threshold; it is located by bisection.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::{
    projected_power, sample_channel, Angles, ChannelError, LinkState, MIN_LINK_DISTANCE,
};
use crate::link::{evaluate_link, noise_power_dbm, NoiseModel, INTERFERENCE_OUTAGE_EPS};
use crate::rng::{self, SimRng};
use crate::stats;
use crate::units::{
    db_to_linear, linear_to_db, per_km_to_per_m, per_m_to_per_km, sample_drop, AntennaArray,
    ScenarioError, ScenarioParams,
};

pub const DEFAULT_TRIALS: usize = 5000;
pub const MIN_TRIALS: usize = 100;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("at least {min} trials are required, got {got}")]
    TooFewTrials { got: usize, min: usize },
    #[error("no trial found any coverage")]
    NoCoverage,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("coverage table: {0}")]
    Table(String),
}

/// Knobs of the radius search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSettings {
    pub n_trials: usize,
    /// Independent channel redraws averaged per probed distance.
    pub redraws: usize,
    /// Bisection stops once the bracket is narrower than this (m).
    pub tolerance_m: f64,
    /// The search never goes beyond the distance where links are out of
    /// outage with probability below this value.
    pub search_outage_eps: f64,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        Self {
            n_trials: DEFAULT_TRIALS,
            redraws: 20,
            tolerance_m: 1.0,
            search_outage_eps: 1e-4,
        }
    }
}

impl CoverageSettings {
    pub fn with_trials(n_trials: usize) -> Self {
        Self {
            n_trials,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    /// Mean coverage radius (m).
    pub r_comm_m: f64,
    /// Half-width of the 95% confidence interval (m).
    pub ci95_m: f64,
    pub rho_per_m: f64,
    pub bs_elems: usize,
    pub veh_elems: usize,
    pub n_trials: usize,
    /// Trials whose drop had every node in outage; counted as radius zero.
    pub outage_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TrialOutcome {
    radius: f64,
    all_outage: bool,
}

fn probe_covered(
    params: &ScenarioParams,
    nodes: &[f64],
    serving: usize,
    vehicle: f64,
    redraws: usize,
    rng: &mut SimRng,
) -> Result<bool, CoverageError> {
    let mut total = 0.0;
    for _ in 0..redraws {
        total += evaluate_link(params, vehicle, nodes, serving, rng)?.sinr_linear();
    }
    let mean = total / redraws as f64;
    Ok(mean > 0.0 && linear_to_db(mean) >= params.sinr_threshold_db)
}

/// Node offering the vehicle the highest SINR in one joint channel
/// realization, or `None` when every node is in outage. Non-serving nodes
/// steer towards random azimuths as in [`evaluate_link`].
fn best_sinr_node(
    params: &ScenarioParams,
    nodes: &[f64],
    vehicle: f64,
    rng: &mut SimRng,
) -> Result<Option<usize>, CoverageError> {
    let horizon = params
        .channel
        .states
        .outage_horizon(INTERFERENCE_OUTAGE_EPS);
    let lo = nodes.partition_point(|&p| p < vehicle - horizon);
    let hi = nodes.partition_point(|&p| p <= vehicle + horizon);
    let mut links = Vec::new();
    for (k, &x) in nodes.iter().enumerate().take(hi).skip(lo) {
        let d = (x - vehicle).abs().max(MIN_LINK_DISTANCE);
        let link = sample_channel(d, &params.channel, params.carrier_freq, params.speed, rng)?;
        if link.state == LinkState::Outage {
            continue;
        }
        let steer = Angles::new(rng.random_range(-PI..PI), 0.0);
        let response =
            link.steered_response(&params.bs_array, &params.veh_array, steer, 0.0, 0.0)?;
        let unit_gain_mw = db_to_linear(params.tx_power_dbm - link.total_loss_db());
        links.push((k, link, response, unit_gain_mw));
    }
    let (tx, rx) = (&params.bs_array, &params.veh_array);
    let noise_mw = db_to_linear(noise_power_dbm(&NoiseModel::from_params(params)));
    let mut best: Option<(usize, f64)> = None;
    for (i, (k, link, _, unit_mw)) in links.iter().enumerate() {
        let beams = link.optimal_beams(tx, rx, 0.0, 0.0)?;
        let mut interference_mw = 0.0;
        for (j, (_, _, response, other_mw)) in links.iter().enumerate() {
            if i != j {
                interference_mw += other_mw * projected_power(&beams.beams.w_rx, response);
            }
        }
        let sinr = unit_mw * beams.gain / (interference_mw + noise_mw);
        if best.is_none_or(|(_, b)| sinr > b) {
            best = Some((*k, sinr));
        }
    }
    Ok(best.map(|(k, _)| k))
}

fn coverage_trial(
    params: &ScenarioParams,
    settings: &CoverageSettings,
    seed: u64,
) -> Result<TrialOutcome, CoverageError> {
    let drop = sample_drop(params, seed)?;
    let mut rng = rng::stream(seed, &[0xc0e5]);
    let vehicle = drop.an_position;
    let Some(serving) = best_sinr_node(params, &drop.in_positions, vehicle, &mut rng)? else {
        return Ok(TrialOutcome {
            radius: 0.0,
            all_outage: true,
        });
    };

    let anchor = drop.in_positions[serving];
    let direction = if vehicle >= anchor { 1.0 } else { -1.0 };
    let (mut lo, mut hi) = (
        0.0,
        params
            .channel
            .states
            .outage_horizon(settings.search_outage_eps),
    );
    while hi - lo > settings.tolerance_m {
        let mid = 0.5 * (lo + hi);
        let covered = probe_covered(
            params,
            &drop.in_positions,
            serving,
            anchor + direction * mid,
            settings.redraws,
            &mut rng,
        )?;
        if covered {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(TrialOutcome {
        radius: lo,
        all_outage: false,
    })
}

/// Estimates the mean coverage radius with the default search settings.
pub fn estimate_coverage(
    params: &ScenarioParams,
    n_trials: usize,
    seed: u64,
) -> Result<CoverageResult, CoverageError> {
    estimate_coverage_with(params, &CoverageSettings::with_trials(n_trials), seed)
}

/// Runs `settings.n_trials` independent trials (in parallel on the current
/// rayon pool) and returns the mean radius with its 95% interval.
pub fn estimate_coverage_with(
    params: &ScenarioParams,
    settings: &CoverageSettings,
    seed: u64,
) -> Result<CoverageResult, CoverageError> {
    if settings.n_trials < MIN_TRIALS {
        return Err(CoverageError::TooFewTrials {
            got: settings.n_trials,
            min: MIN_TRIALS,
        });
    }
    let outcomes = (0..settings.n_trials as u64)
        .into_par_iter()
        .map(|i| coverage_trial(params, settings, rng::derive_seed(seed, &[i])))
        .collect::<Result<Vec<_>, _>>()?;
    let radii: Vec<f64> = outcomes.iter().map(|o| o.radius).collect();
    let outage_trials = outcomes.iter().filter(|o| o.all_outage).count();
    if outage_trials > 0 {
        log::debug!(
            "rho = {} /km, arrays {}/{}: {outage_trials} all-outage trials",
            per_m_to_per_km(params.rho),
            params.bs_array,
            params.veh_array
        );
    }
    let r_comm_m = stats::mean(&radii);
    if r_comm_m <= 0.0 {
        return Err(CoverageError::NoCoverage);
    }
    Ok(CoverageResult {
        r_comm_m,
        ci95_m: stats::Z95 * stats::std_error(&radii),
        rho_per_m: params.rho,
        bs_elems: params.bs_array.elements(),
        veh_elems: params.veh_array.elements(),
        n_trials: settings.n_trials,
        outage_trials,
    })
}

/// An infrastructure/vehicle array pairing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    pub bs: AntennaArray,
    pub veh: AntennaArray,
}

impl ArrayConfig {
    pub const fn new(bs: (usize, usize), veh: (usize, usize)) -> Self {
        Self {
            bs: AntennaArray::new(bs.0, bs.1),
            veh: AntennaArray::new(veh.0, veh.1),
        }
    }
}

/// One cell of a coverage sweep.
#[derive(Debug, Clone)]
pub struct CoverageCell {
    pub rho_per_km: f64,
    pub arrays: ArrayConfig,
    pub seed: u64,
    pub n_trials: usize,
    pub outcome: Result<CoverageResult, String>,
}

/// Seed of the cell at density `rho_per_km`. Array configurations at the same
/// density share drops.
pub fn cell_seed(seed: u64, rho_per_km: f64) -> u64 {
    rng::derive_seed(seed, &[rho_per_km.to_bits()])
}

/// Evaluates every (density, arrays) pair. Failed cells are kept with their
/// error message.
pub fn coverage_sweep(
    densities_per_km: &[f64],
    configs: &[ArrayConfig],
    params: &ScenarioParams,
    settings: &CoverageSettings,
    seed: u64,
) -> Vec<CoverageCell> {
    let mut cells = Vec::with_capacity(densities_per_km.len() * configs.len());
    for &rho_per_km in densities_per_km {
        for &arrays in configs {
            let p = params
                .with_density(per_km_to_per_m(rho_per_km))
                .with_arrays(arrays.bs, arrays.veh);
            let outcome = estimate_coverage_with(&p, settings, cell_seed(seed, rho_per_km))
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!(
                    "coverage cell rho = {rho_per_km} /km, {}/{} failed: {e}",
                    arrays.bs,
                    arrays.veh
                );
            }
            cells.push(CoverageCell {
                rho_per_km,
                arrays,
                seed,
                n_trials: settings.n_trials,
                outcome,
            });
        }
    }
    cells
}

/// A row of the coverage CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub rho_per_km: f64,
    pub bs_rows: usize,
    pub bs_cols: usize,
    pub veh_rows: usize,
    pub veh_cols: usize,
    pub r_comm_m: f64,
    pub ci95_m: f64,
    pub n_trials: usize,
    pub seed: u64,
}

impl CoverageRecord {
    pub fn arrays(&self) -> ArrayConfig {
        ArrayConfig::new((self.bs_rows, self.bs_cols), (self.veh_rows, self.veh_cols))
    }
}

impl From<&CoverageCell> for CoverageRecord {
    fn from(c: &CoverageCell) -> Self {
        let (r, ci) = match &c.outcome {
            Ok(res) => (res.r_comm_m, res.ci95_m),
            Err(_) => (f64::NAN, f64::NAN),
        };
        Self {
            rho_per_km: c.rho_per_km,
            bs_rows: c.arrays.bs.rows,
            bs_cols: c.arrays.bs.cols,
            veh_rows: c.arrays.veh.rows,
            veh_cols: c.arrays.veh.cols,
            r_comm_m: r,
            ci95_m: ci,
            n_trials: c.n_trials,
            seed: c.seed,
        }
    }
}

pub fn write_coverage_csv<W: Write>(records: &[CoverageRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coverage_csv<R: Read>(input: R) -> Result<Vec<CoverageRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Lookup of coverage radii by density and arrays.
#[derive(Debug, Clone, Default)]
pub struct CoverageTable {
    records: Vec<CoverageRecord>,
}

fn same_density(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

impl CoverageTable {
    pub fn new(records: Vec<CoverageRecord>) -> Self {
        Self { records }
    }

    /// Radius for the given point, if the table has a finite value for it.
    pub fn r_comm(&self, rho_per_km: f64, arrays: ArrayConfig) -> Option<f64> {
        self.records
            .iter()
            .find(|r| same_density(r.rho_per_km, rho_per_km) && r.arrays() == arrays)
            .map(|r| r.r_comm_m)
            .filter(|r| r.is_finite() && *r > 0.0)
    }

    pub fn records(&self) -> &[CoverageRecord] {
        &self.records
    }
}
