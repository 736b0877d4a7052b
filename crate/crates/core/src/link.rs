//! Link budget: received power, thermal noise and SINR.

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::{sample_channel, Angles, ChannelError, LinkState, MIN_LINK_DISTANCE};
use crate::units::{db_to_linear, linear_to_db, ScenarioParams};

pub const THERMAL_NOISE_DENSITY_DBM_HZ: f64 = -174.0;

/// Interferers farther than the distance at which a link is out of outage
/// with probability below this value are ignored.
pub const INTERFERENCE_OUTAGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Hz
    pub bandwidth: f64,
    pub noise_figure_db: f64,
    pub thermal_density_dbm_hz: f64,
}

impl NoiseModel {
    pub fn new(bandwidth: f64, noise_figure_db: f64) -> Self {
        Self {
            bandwidth,
            noise_figure_db,
            thermal_density_dbm_hz: THERMAL_NOISE_DENSITY_DBM_HZ,
        }
    }

    pub fn from_params(p: &ScenarioParams) -> Self {
        Self::new(p.bandwidth, p.noise_figure_db)
    }
}

/// `N0 + 10·log10(W) + NF` in dBm.
pub fn noise_power_dbm(n: &NoiseModel) -> f64 {
    n.thermal_density_dbm_hz + 10.0 * n.bandwidth.log10() + n.noise_figure_db
}

/// `P_TX + G_BF − PL − ξ`, all in dB/dBm.
pub fn received_power_dbm(tx_dbm: f64, gain_db: f64, pl_db: f64, shadow_db: f64) -> f64 {
    tx_dbm + gain_db - pl_db - shadow_db
}

/// The pieces of one transmitter → vehicle link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkComponents {
    pub state: LinkState,
    pub tx_power_dbm: f64,
    /// Beamforming gain, linear.
    pub bf_gain: f64,
    pub pathloss_db: f64,
    pub shadow_db: f64,
}

impl LinkComponents {
    /// Received power in dBm, −∞ in outage.
    pub fn rx_power_dbm(&self) -> f64 {
        match self.state {
            LinkState::Outage => f64::NEG_INFINITY,
            _ => received_power_dbm(
                self.tx_power_dbm,
                linear_to_db(self.bf_gain),
                self.pathloss_db,
                self.shadow_db,
            ),
        }
    }

    pub fn rx_power_mw(&self) -> f64 {
        match self.state {
            LinkState::Outage => 0.0,
            _ => db_to_linear(self.rx_power_dbm()),
        }
    }
}

/// SINR of `serving` against `interferers` and thermal noise, in dB.
///
/// A serving link in outage yields −∞; interferers in outage add nothing.
pub fn sinr_db(
    serving: &LinkComponents,
    interferers: &[LinkComponents],
    noise: &NoiseModel,
) -> f64 {
    if serving.state == LinkState::Outage {
        return f64::NEG_INFINITY;
    }
    let interference: f64 = interferers.iter().map(LinkComponents::rx_power_mw).sum();
    let denom = interference + db_to_linear(noise_power_dbm(noise));
    linear_to_db(serving.rx_power_mw() / denom)
}

/// Outcome of evaluating one vehicle position against a field of nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudgetResult {
    pub rx_power_dbm: f64,
    pub pathloss_db: f64,
    pub shadow_db: f64,
    pub bf_gain_db: f64,
    pub sinr_db: f64,
    pub serving_index: usize,
    /// Aggregate interference (dBm); NaN when the serving link is in outage
    /// and no beam exists to measure it through.
    pub interference_dbm: f64,
}

impl LinkBudgetResult {
    pub fn sinr_linear(&self) -> f64 {
        db_to_linear(self.sinr_db)
    }
}

/// Samples one realization of every link between a vehicle at `vehicle` and
/// the nodes at `in_positions`, with node `serving` beamforming optimally
/// towards the vehicle.
///
/// Every other node transmits at full power with a beam steered towards an
/// azimuth drawn uniformly at random (its own user); the vehicle listens
/// through the receive beam of the serving link.
pub fn evaluate_link<R: Rng + ?Sized>(
    params: &ScenarioParams,
    vehicle: f64,
    in_positions: &[f64],
    serving: usize,
    rng: &mut R,
) -> Result<LinkBudgetResult, ChannelError> {
    let ch = &params.channel;
    let (tx, rx) = (&params.bs_array, &params.veh_array);
    let distance = |x: f64| (x - vehicle).abs().max(MIN_LINK_DISTANCE);
    let serving_link = sample_channel(
        distance(in_positions[serving]),
        ch,
        params.carrier_freq,
        params.speed,
        rng,
    )?;
    if serving_link.state == LinkState::Outage {
        return Ok(LinkBudgetResult {
            rx_power_dbm: f64::NEG_INFINITY,
            pathloss_db: f64::INFINITY,
            shadow_db: 0.0,
            bf_gain_db: f64::NEG_INFINITY,
            sinr_db: f64::NEG_INFINITY,
            serving_index: serving,
            interference_dbm: f64::NAN,
        });
    }
    let beams = serving_link.optimal_beams(tx, rx, 0.0, 0.0)?;
    let signal = LinkComponents {
        state: serving_link.state,
        tx_power_dbm: params.tx_power_dbm,
        bf_gain: beams.gain,
        pathloss_db: serving_link.pathloss_db,
        shadow_db: serving_link.shadow_db,
    };

    let horizon = ch.states.outage_horizon(INTERFERENCE_OUTAGE_EPS);
    let lo = in_positions.partition_point(|&p| p < vehicle - horizon);
    let hi = in_positions.partition_point(|&p| p <= vehicle + horizon);
    let mut interference_mw = 0.0;
    for (k, &x) in in_positions.iter().enumerate().take(hi).skip(lo) {
        if k == serving {
            continue;
        }
        let link = sample_channel(distance(x), ch, params.carrier_freq, params.speed, rng)?;
        if link.state == LinkState::Outage {
            continue;
        }
        let direction = Angles::new(rng.random_range(-PI..PI), 0.0);
        let gain = link.steered_gain(tx, rx, &beams.beams.w_rx, direction, 0.0, 0.0)?;
        interference_mw += db_to_linear(params.tx_power_dbm - link.total_loss_db()) * gain;
    }

    let noise_mw = db_to_linear(noise_power_dbm(&NoiseModel::from_params(params)));
    let signal_mw = signal.rx_power_mw();
    Ok(LinkBudgetResult {
        rx_power_dbm: signal.rx_power_dbm(),
        pathloss_db: serving_link.pathloss_db,
        shadow_db: serving_link.shadow_db,
        bf_gain_db: linear_to_db(beams.gain),
        sinr_db: linear_to_db(signal_mw / (interference_mw + noise_mw)),
        serving_index: serving,
        interference_dbm: linear_to_db(interference_mw),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn link(rx_dbm: f64) -> LinkComponents {
        LinkComponents {
            state: LinkState::Los,
            tx_power_dbm: rx_dbm,
            bf_gain: 1.0,
            pathloss_db: 0.0,
            shadow_db: 0.0,
        }
    }

    #[test]
    fn received_power_examples() {
        assert!((received_power_dbm(30.0, 20.0, 101.4, 0.0) - (-51.4)).abs() < 1e-12);
        assert_eq!(received_power_dbm(0.0, 0.0, 0.0, 0.0), 0.0);
        let up = received_power_dbm(30.0, 10.0, 100.0, 5.8);
        let down = received_power_dbm(30.0, 10.0, 100.0, -5.8);
        assert!(((down - up) - 11.6).abs() < 1e-12);
    }

    #[test]
    fn noise_power_examples() {
        assert!((noise_power_dbm(&NoiseModel::new(1e9, 5.0)) - (-79.0)).abs() < 1e-12);
        assert_eq!(noise_power_dbm(&NoiseModel::new(1.0, 0.0)), -174.0);
        let a = noise_power_dbm(&NoiseModel::new(2e8, 5.0));
        let b = noise_power_dbm(&NoiseModel::new(4e8, 5.0));
        assert!((b - a - 10.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn noise_limited_sinr() {
        let s = link(-51.4);
        let sinr = sinr_db(&s, &[], &NoiseModel::new(1e9, 5.0));
        assert!((sinr - 27.6).abs() < 1e-9);
    }

    #[test]
    fn equal_interferer_gives_zero_db() {
        let noise = NoiseModel {
            thermal_density_dbm_hz: -400.0,
            ..NoiseModel::new(1e9, 0.0)
        };
        let sinr = sinr_db(&link(-60.0), &[link(-60.0)], &noise);
        assert!(sinr.abs() < 1e-9);
    }

    #[test]
    fn outage_serving_is_unusable_and_outage_interferer_is_silent() {
        let noise = NoiseModel::new(1e9, 5.0);
        let mut out = link(-40.0);
        out.state = LinkState::Outage;
        assert_eq!(sinr_db(&out, &[], &noise), f64::NEG_INFINITY);
        assert_eq!(
            sinr_db(&link(-50.0), &[out], &noise),
            sinr_db(&link(-50.0), &[], &noise)
        );
    }

    #[test]
    fn field_evaluation_is_reproducible_and_consistent() {
        let p = ScenarioParams::default();
        let nodes = [-300.0, -40.0, 15.0, 90.0, 400.0];
        let mut seen_signal = false;
        for i in 0..50 {
            let a = evaluate_link(&p, 0.0, &nodes, 2, &mut rng::stream(5, &[i])).unwrap();
            let b = evaluate_link(&p, 0.0, &nodes, 2, &mut rng::stream(5, &[i])).unwrap();
            assert_eq!(a.sinr_db.to_bits(), b.sinr_db.to_bits());
            if a.rx_power_dbm.is_finite() {
                seen_signal = true;
                let rx =
                    received_power_dbm(p.tx_power_dbm, a.bf_gain_db, a.pathloss_db, a.shadow_db);
                assert!((rx - a.rx_power_dbm).abs() < 1e-9);
                let noise = db_to_linear(noise_power_dbm(&NoiseModel::from_params(&p)));
                let expected =
                    db_to_linear(a.rx_power_dbm) / (db_to_linear(a.interference_dbm) + noise);
                assert!((linear_to_db(expected) - a.sinr_db).abs() < 1e-9);
            }
        }
        assert!(seen_signal);
    }

    proptest! {
        #[test]
        fn db_round_trip(x in -200.0f64..200.0) {
            prop_assert!((linear_to_db(db_to_linear(x)) - x).abs() < 1e-9);
        }

        #[test]
        fn sinr_monotone(
            s in -120.0f64..-20.0,
            interferers in proptest::collection::vec(-130.0f64..-30.0, 0..6),
            extra in -130.0f64..-30.0,
            bump in 0.1f64..10.0,
        ) {
            let noise = NoiseModel::new(1e9, 5.0);
            let base: Vec<_> = interferers.iter().map(|&p| link(p)).collect();
            let before = sinr_db(&link(s), &base, &noise);
            let mut more = base.clone();
            more.push(link(extra));
            prop_assert!(sinr_db(&link(s), &more, &noise) < before);
            prop_assert!(sinr_db(&link(s + bump), &base, &noise) > before);
            if let Some(first) = base.first() {
                let mut louder = base.clone();
                louder[0] = link(first.tx_power_dbm + bump);
                prop_assert!(sinr_db(&link(s), &louder, &noise) <= before);
            }
        }

        #[test]
        fn empty_interference_is_snr(s in -150.0f64..0.0) {
            let noise = NoiseModel::new(1e9, 5.0);
            let snr = s - noise_power_dbm(&noise);
            prop_assert!((sinr_db(&link(s), &[], &noise) - snr).abs() < 1e-12);
        }
    }
}
