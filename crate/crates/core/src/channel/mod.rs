//! Measurement-based 28 GHz statistical channel.
//!
//! A link is in one of three large-scale states whose probabilities depend on
//! distance only. LoS and NLoS links see a log-distance pathloss with
//! log-normal shadowing; outage links carry no power at all. The small-scale
//! channel is a sum of clusters of subpaths, each with its own angles of
//! arrival/departure, delay and Doppler phase.

mod array;
mod clusters;
mod mimo;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use array::{signature_overlap, signature_projection, spatial_signature, SeparableSignature};
pub use clusters::{sample_clusters, Angles, Cluster, ClusterParams, ClusterSet, Subpath};
pub use mimo::{
    assemble_channel_matrix, beamforming_gain, best_beam_pair, projected_power, BeamPair,
    BeamformingVectors, ChannelMatrix,
};

use num_complex::Complex64;

/// Shortest link distance used by the simulators (m); avoids the log singularity.
pub const MIN_LINK_DISTANCE: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("link is in outage and carries no power")]
    Outage,
    #[error("pathloss is undefined at distance {0} m")]
    InvalidDistance(f64),
    #[error("dimension mismatch: channel is {rows}x{cols}, beams are rx {rx} / tx {tx}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        rx: usize,
        tx: usize,
    },
    #[error("channel matrix is identically zero")]
    ZeroMatrix,
}

/// Large-scale link state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkState {
    Los,
    Nlos,
    Outage,
}

/// Distance coefficients of the outage/LoS probability law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateProbabilityParams {
    /// 1/m
    pub a_out: f64,
    pub b_out: f64,
    /// 1/m
    pub a_los: f64,
}

impl Default for StateProbabilityParams {
    fn default() -> Self {
        Self {
            a_out: 0.0334,
            b_out: 5.2,
            a_los: 0.0149,
        }
    }
}

impl StateProbabilityParams {
    /// Distance beyond which a link is in outage with probability at least
    /// `1 - eps`.
    pub fn outage_horizon(&self, eps: f64) -> f64 {
        (self.b_out - eps.ln()) / self.a_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateProbabilities {
    pub outage: f64,
    pub los: f64,
    pub nlos: f64,
}

/// Probabilities of outage, LoS and NLoS at distance `d` (m).
pub fn link_state_probabilities(d: f64, p: &StateProbabilityParams) -> StateProbabilities {
    let outage = (1.0 - (-p.a_out * d + p.b_out).exp()).max(0.0);
    let los = (1.0 - outage) * (-p.a_los * d).exp();
    let nlos = 1.0 - outage - los;
    StateProbabilities { outage, los, nlos }
}

pub fn sample_link_state<R: Rng + ?Sized>(
    d: f64,
    p: &StateProbabilityParams,
    rng: &mut R,
) -> LinkState {
    let probs = link_state_probabilities(d, p);
    let u: f64 = rng.random();
    if u < probs.outage {
        LinkState::Outage
    } else if u < probs.outage + probs.los {
        LinkState::Los
    } else {
        LinkState::Nlos
    }
}

/// Log-distance pathloss `alpha + 10·beta·log10(d)` with shadowing deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathlossParams {
    pub alpha_db: f64,
    pub beta: f64,
    pub shadow_sigma_db: f64,
}

/// Per-state pathloss parameters.
///
/// Defaults are adopted from the cited 28 GHz measurement campaign in New
/// York City (LoS: 61.4 dB, 2.0, 5.8 dB; NLoS: 72.0 dB, 2.92, 8.7 dB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathlossModel {
    pub los: PathlossParams,
    pub nlos: PathlossParams,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self {
            los: PathlossParams {
                alpha_db: 61.4,
                beta: 2.0,
                shadow_sigma_db: 5.8,
            },
            nlos: PathlossParams {
                alpha_db: 72.0,
                beta: 2.92,
                shadow_sigma_db: 8.7,
            },
        }
    }
}

impl PathlossModel {
    pub fn for_state(&self, state: LinkState) -> Result<&PathlossParams, ChannelError> {
        match state {
            LinkState::Los => Ok(&self.los),
            LinkState::Nlos => Ok(&self.nlos),
            LinkState::Outage => Err(ChannelError::Outage),
        }
    }
}

/// Pathloss in dB at distance `d`, plus an optional shadowing term `xi_db`.
pub fn pathloss_db(
    d: f64,
    state: LinkState,
    model: &PathlossModel,
    xi_db: Option<f64>,
) -> Result<f64, ChannelError> {
    let p = model.for_state(state)?;
    if !(d > 0.0) {
        return Err(ChannelError::InvalidDistance(d));
    }
    Ok(p.alpha_db + 10.0 * p.beta * d.log10() + xi_db.unwrap_or(0.0))
}

/// Draws a shadowing term ξ ~ N(0, σ²) for `state` (dB).
pub fn sample_shadowing<R: Rng + ?Sized>(
    state: LinkState,
    model: &PathlossModel,
    rng: &mut R,
) -> Result<f64, ChannelError> {
    let sigma = model.for_state(state)?.shadow_sigma_db;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(Normal::new(0.0, sigma)
        .expect("sigma validated non-negative")
        .sample(rng))
}

/// All statistical channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelParams {
    pub states: StateProbabilityParams,
    pub pathloss: PathlossModel,
    pub clusters: ClusterParams,
}

/// A sampled link: large-scale state, loss, and small-scale structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInstance {
    pub state: LinkState,
    /// Distance-dependent pathloss (dB); infinite in outage.
    pub pathloss_db: f64,
    /// Shadowing ξ (dB) drawn for this link.
    pub shadow_db: f64,
    pub clusters: ClusterSet,
    /// Maximum Doppler shift f·v/c (Hz).
    pub doppler_hz: f64,
}

impl ChannelInstance {
    /// Total large-scale attenuation, pathloss plus shadowing (dB).
    pub fn total_loss_db(&self) -> f64 {
        self.pathloss_db + self.shadow_db
    }

    /// Small-scale fading coefficient of subpath `subpath` in cluster `cluster`:
    /// `sqrt(P) · exp(2πi·f_d·cos(ω)·t − 2πi·τ·f)`.
    ///
    /// Panics if either index is out of range.
    pub fn small_scale_fading(&self, cluster: usize, subpath: usize, t: f64, f: f64) -> Complex64 {
        let sp = &self.clusters.clusters[cluster].subpaths[subpath];
        sp.fading(self.doppler_hz, t, f)
    }
}

/// Samples the complete channel between two nodes `d` meters apart.
///
/// `speed` is the relative speed used for the Doppler shift.
pub fn sample_channel<R: Rng + ?Sized>(
    d: f64,
    params: &ChannelParams,
    carrier_freq: f64,
    speed: f64,
    rng: &mut R,
) -> Result<ChannelInstance, ChannelError> {
    let doppler_hz = carrier_freq * speed / crate::units::SPEED_OF_LIGHT;
    let state = sample_link_state(d, &params.states, rng);
    if state == LinkState::Outage {
        return Ok(ChannelInstance {
            state,
            pathloss_db: f64::INFINITY,
            shadow_db: 0.0,
            clusters: ClusterSet::default(),
            doppler_hz,
        });
    }
    let pathloss_db = pathloss_db(d, state, &params.pathloss, None)?;
    let shadow_db = sample_shadowing(state, &params.pathloss, rng)?;
    let clusters = sample_clusters(&params.clusters, rng);
    Ok(ChannelInstance {
        state,
        pathloss_db,
        shadow_db,
        clusters,
        doppler_hz,
    })
}
