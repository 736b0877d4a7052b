//! Coverage, connectivity and throughput modelling for millimeter-wave
//! vehicle-to-infrastructure links.
//!
//! Infrastructure nodes are dropped on a road as a Poisson process; a vehicle
//! drives past them at constant speed and realigns its beam at the start of
//! every slot. The crate provides
//!
//! * a 28 GHz statistical channel with planar-array beamforming ([`channel`]),
//! * SINR link budgets against a field of interferers ([`link`]),
//! * Monte Carlo estimation of the mean coverage radius ([`coverage`]),
//! * the closed-form connectivity and throughput model ([`analytics`]),
//! * a slot-level road simulator that checks the closed forms ([`roadsim`]),
//! * the sweeps behind the `mmv2i` command line tool ([`experiment`]).

pub mod analytics;
pub mod channel;
pub mod coverage;
pub mod experiment;
pub mod link;
pub mod rng;
pub mod roadsim;
pub mod stats;
pub mod units;

pub use units::{AntennaArray, ScenarioParams};
