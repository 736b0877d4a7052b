//! Slot-level simulation of a vehicle driving through a Poisson deployment.
//!
//! At every slot boundary the vehicle is connected when its nearest node is
//! within the coverage radius. It then serves the nearest node ahead when that
//! one is in range, otherwise the one behind. The connection holds until the
//! vehicle overtakes its node (the beam can no longer follow it); a vehicle
//! that starts a slot idle stays idle until the next boundary.

use std::collections::VecDeque;
use std::io::Write;

use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytics::{self, LeaveTimeForm};
use crate::rng::{self, SimRng};
use crate::stats;

pub const MIN_SLOTS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum RoadSimError {
    #[error("at least {min} slots are required, got {got}")]
    TooFewSlots { got: usize, min: usize },
    #[error("{name} must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
}

/// Inputs of a road run (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadParams {
    /// Nodes per meter.
    pub rho: f64,
    /// m/s
    pub speed: f64,
    /// s
    pub slot_duration: f64,
    /// m
    pub r_comm: f64,
}

impl RoadParams {
    fn validate(&self) -> Result<(), RoadSimError> {
        let checks = [
            ("rho", self.rho, self.rho > 0.0 && self.rho.is_finite(), "positive"),
            ("speed", self.speed, self.speed >= 0.0 && self.speed.is_finite(), "non-negative"),
            (
                "slot_duration",
                self.slot_duration,
                self.slot_duration > 0.0 && self.slot_duration.is_finite(),
                "positive",
            ),
            ("r_comm", self.r_comm, self.r_comm > 0.0 && self.r_comm.is_finite(), "positive"),
        ];
        for (name, value, ok, requirement) in checks {
            if !ok {
                return Err(RoadSimError::InvalidParameter {
                    name,
                    value,
                    requirement,
                });
            }
        }
        Ok(())
    }
}

/// What happened during one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTrace {
    pub slot_index: usize,
    pub x_vehicle_m: f64,
    pub connected_at_start: bool,
    pub overtook_during_slot: bool,
    pub connected_time_s: f64,
    /// Distance to the serving node at the slot start; NaN when idle.
    pub serving_distance_m: f64,
    /// Distance to the nearest node at or ahead of the vehicle.
    pub ahead_m: f64,
    /// Distance to the nearest node behind the vehicle.
    pub behind_m: f64,
    /// The vehicle passed at least one node since the previous slot start.
    pub node_passed: bool,
}

/// Node positions generated lazily around a moving point.
struct Deployment {
    nodes: VecDeque<f64>,
    frontier: f64,
    gaps: Exp<f64>,
    chunk: f64,
    keep_behind: f64,
    rng: SimRng,
}

impl Deployment {
    fn new(rho: f64, start: f64, keep_behind: f64, rng: SimRng) -> Self {
        Self {
            nodes: VecDeque::new(),
            frontier: start - keep_behind,
            gaps: Exp::new(rho).expect("positive density"),
            chunk: 100.0 / rho,
            keep_behind: keep_behind + 10.0 / rho,
            rng,
        }
    }

    /// Makes sure every node within `[x − keep_behind, x + reach]` exists and
    /// drops the ones far behind.
    fn advance(&mut self, x: f64, reach: f64) {
        while self.frontier < x + reach {
            let target = self.frontier + self.chunk;
            let mut next = self.nodes.back().copied().unwrap_or(self.frontier);
            loop {
                next = next.max(self.frontier) + self.gaps.sample(&mut self.rng);
                if next > target {
                    // the overshoot is a fresh exponential by memorylessness
                    break;
                }
                self.nodes.push_back(next);
                self.frontier = next;
            }
            self.frontier = target;
        }
        while self.nodes.front().is_some_and(|&p| p < x - self.keep_behind) {
            self.nodes.pop_front();
        }
    }

    /// Distances to the nearest node at or ahead of `x` and behind it, plus
    /// the position of the former.
    fn neighbours(&self, x: f64) -> (f64, f64, f64) {
        let i = self.nodes.partition_point(|&p| p < x);
        let ahead_pos = self.nodes.get(i).copied().unwrap_or(f64::INFINITY);
        let behind = i
            .checked_sub(1)
            .and_then(|j| self.nodes.get(j))
            .map_or(f64::INFINITY, |&p| x - p);
        (ahead_pos - x, behind, ahead_pos)
    }
}

/// Runs `n_slots` consecutive slots starting at `x = 0`.
pub fn simulate_road(params: &RoadParams, n_slots: usize, seed: u64) -> Result<Vec<SlotTrace>, RoadSimError> {
    if n_slots < MIN_SLOTS {
        return Err(RoadSimError::TooFewSlots {
            got: n_slots,
            min: MIN_SLOTS,
        });
    }
    params.validate()?;
    let RoadParams {
        speed: v,
        slot_duration: t,
        r_comm: r,
        ..
    } = *params;
    let step = v * t;
    let reach = r.max(step) + 1.0;
    let mut road = Deployment::new(params.rho, 0.0, r, rng::stream(seed, &[0x70ad]));
    let mut traces = Vec::with_capacity(n_slots);
    let mut last_ahead = f64::NAN;
    for k in 0..n_slots {
        let x = k as f64 * step;
        road.advance(x, reach);
        let (ahead, behind, ahead_pos) = road.neighbours(x);
        let node_passed = k > 0 && ahead_pos != last_ahead;
        last_ahead = ahead_pos;
        let connected = ahead.min(behind) <= r;
        let serving_ahead = ahead <= r;
        let overtook = connected && serving_ahead && ahead < step;
        let connected_time_s = match (connected, overtook) {
            (false, _) => 0.0,
            (true, true) => ahead / v,
            (true, false) => t,
        };
        let serving_distance_m = match (connected, serving_ahead) {
            (false, _) => f64::NAN,
            (true, true) => ahead,
            (true, false) => behind,
        };
        traces.push(SlotTrace {
            slot_index: k,
            x_vehicle_m: x,
            connected_at_start: connected,
            overtook_during_slot: overtook,
            connected_time_s,
            serving_distance_m,
            ahead_m: ahead,
            behind_m: behind,
            node_passed,
        });
    }
    Ok(traces)
}

#[derive(Serialize)]
struct TraceRecord {
    slot: usize,
    x_vehicle_m: f64,
    serving_distance_m: f64,
    connected_at_start: bool,
    overtook: bool,
    connected_time_s: f64,
}

/// Writes the per-slot trace as CSV.
pub fn write_trace_csv<W: Write>(traces: &[SlotTrace], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for t in traces {
        w.serialize(TraceRecord {
            slot: t.slot_index,
            x_vehicle_m: t.x_vehicle_m,
            serving_distance_m: t.serving_distance_m,
            connected_at_start: t.connected_at_start,
            overtook: t.overtook_during_slot,
            connected_time_s: t.connected_time_s,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Standardized distance of `reference` from this estimate.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.value - reference;
        if self.se > 0.0 {
            diff / self.se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

/// Empirical counterparts of the closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalMetrics {
    /// Nearest node within `R` at the slot start.
    pub p_start: Estimate,
    /// The gap between the two nodes around the vehicle is at most `2R`.
    pub p_start_spacing: Estimate,
    pub p_nl: Estimate,
    /// Mean connected time over slots that ended by overtaking; `None` when
    /// no slot did.
    pub e_tl: Option<Estimate>,
    pub e_tcomm: Estimate,
    pub duration_ratio: Estimate,
    /// `P_NL` when the vehicle always serves its nearest node.
    pub p_nl_serve_nearest: Estimate,
    pub e_tcomm_serve_nearest: Estimate,
    pub n_slots: usize,
    pub n_overtakes: usize,
    pub n_cycles: usize,
}

impl EmpiricalMetrics {
    pub fn p_no_leave_given_start(&self) -> f64 {
        if self.p_start.value > 0.0 {
            self.p_nl.value / self.p_start.value
        } else {
            0.0
        }
    }
}

/// Per-cycle sums of the slot quantities. A cycle runs from one node passage
/// to the next; the deployment renews itself at every node, so cycles are
/// independent.
#[derive(Default)]
struct Cycles {
    start: Vec<(f64, f64)>,
    spacing: Vec<(f64, f64)>,
    nl: Vec<(f64, f64)>,
    tcomm: Vec<(f64, f64)>,
    nl_nearest: Vec<(f64, f64)>,
    tcomm_nearest: Vec<(f64, f64)>,
    leave_times: Vec<f64>,
    n_slots: usize,
}

impl Cycles {
    fn push_run(&mut self, traces: &[SlotTrace], r_comm: f64, step: f64, t: f64) {
        let mut open = [0.0; 6];
        let mut len = 0.0;
        for (i, tr) in traces.iter().enumerate() {
            if i > 0 && tr.node_passed && len > 0.0 {
                self.close(&open, len);
                open = [0.0; 6];
                len = 0.0;
            }
            let nearest_lost =
                tr.connected_at_start && tr.ahead_m <= tr.behind_m && tr.ahead_m < step;
            let slot = [
                f64::from(tr.connected_at_start),
                f64::from(tr.ahead_m + tr.behind_m <= 2.0 * r_comm),
                f64::from(tr.connected_at_start && !tr.overtook_during_slot),
                tr.connected_time_s,
                f64::from(tr.connected_at_start && !nearest_lost),
                match (tr.connected_at_start, nearest_lost) {
                    (false, _) => 0.0,
                    (true, true) => tr.ahead_m / (step / t),
                    (true, false) => t,
                },
            ];
            for (acc, y) in open.iter_mut().zip(slot) {
                *acc += y;
            }
            len += 1.0;
            if tr.overtook_during_slot {
                self.leave_times.push(tr.connected_time_s);
            }
        }
        if len > 0.0 {
            self.close(&open, len);
        }
        self.n_slots += traces.len();
    }

    fn close(&mut self, sums: &[f64; 6], len: f64) {
        let targets = [
            &mut self.start,
            &mut self.spacing,
            &mut self.nl,
            &mut self.tcomm,
            &mut self.nl_nearest,
            &mut self.tcomm_nearest,
        ];
        for (v, &y) in targets.into_iter().zip(sums) {
            v.push((y, len));
        }
    }

    fn metrics(&self, t: f64) -> EmpiricalMetrics {
        let est = |c: &[(f64, f64)]| {
            let (value, se) = stats::regenerative(c);
            Estimate { value, se }
        };
        let e_tcomm = est(&self.tcomm);
        EmpiricalMetrics {
            p_start: est(&self.start),
            p_start_spacing: est(&self.spacing),
            p_nl: est(&self.nl),
            e_tl: (!self.leave_times.is_empty()).then(|| Estimate {
                value: stats::mean(&self.leave_times),
                se: stats::std_error(&self.leave_times),
            }),
            e_tcomm,
            duration_ratio: Estimate {
                value: e_tcomm.value / t,
                se: e_tcomm.se / t,
            },
            p_nl_serve_nearest: est(&self.nl_nearest),
            e_tcomm_serve_nearest: est(&self.tcomm_nearest),
            n_slots: self.n_slots,
            n_overtakes: self.leave_times.len(),
            n_cycles: self.start.len(),
        }
    }
}

/// Empirical metrics of a single run.
pub fn empirical_metrics(traces: &[SlotTrace], params: &RoadParams) -> EmpiricalMetrics {
    pooled_metrics(std::slice::from_ref(&traces), params)
}

/// Pools independent runs. Standard errors treat the stretches between node
/// passages as independent cycles, which accounts for the correlation
/// between consecutive slots.
pub fn pooled_metrics<T: AsRef<[SlotTrace]>>(runs: &[T], params: &RoadParams) -> EmpiricalMetrics {
    let t = params.slot_duration;
    let mut cycles = Cycles::default();
    for run in runs {
        cycles.push_run(run.as_ref(), params.r_comm, params.speed * t, t);
    }
    cycles.metrics(t)
}

/// Splits `n_slots` into `n_runs` independent runs (each seeded from `seed`
/// and its index) and pools them.
pub fn simulate_pooled(
    params: &RoadParams,
    n_slots: usize,
    n_runs: usize,
    seed: u64,
) -> Result<EmpiricalMetrics, RoadSimError> {
    let n_runs = n_runs.max(1);
    let per_run = n_slots / n_runs;
    let runs = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| simulate_road(params, per_run, rng::derive_seed(seed, &[i])))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pooled_metrics(&runs, params))
}

/// One analytic-versus-empirical comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub rho_per_km: f64,
    pub speed_kmh: f64,
    pub slot_s: f64,
    pub metric: String,
    pub analytic: f64,
    pub empirical: f64,
    pub se: f64,
    pub z_score: f64,
    /// Whether the row takes part in the pass/fail decision.
    pub gating: bool,
}

impl ValidationRow {
    pub fn passes(&self) -> bool {
        !self.gating || self.z_score.abs() <= 3.0
    }
}

/// Closed forms to compare against; overridable to corrupt a formula on
/// purpose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForms {
    pub p_start: f64,
    pub p_no_leave: f64,
    pub e_tl: f64,
    pub e_tl_printed: f64,
}

impl ClosedForms {
    pub fn evaluate(p: &RoadParams) -> Self {
        let (rho, r, v, t) = (p.rho, p.r_comm, p.speed, p.slot_duration);
        Self {
            p_start: analytics::p_start(rho, r),
            p_no_leave: analytics::p_no_leave(rho, r, v, t),
            e_tl: analytics::e_tl(rho, r, v, t).unwrap_or(0.0),
            e_tl_printed: analytics::e_tl_form(rho, r, v, t, LeaveTimeForm::Printed).unwrap_or(0.0),
        }
    }
}

/// Comparison rows for one operating point.
///
/// Probabilities use at least the independent-slot binomial error under the
/// closed form, so a run that never sees a rare event cannot claim a zero
/// error. `P_start`, `P_NL` and `E[T_comm]` gate; the rest are diagnostics.
pub fn validation_rows(
    params: &RoadParams,
    forms: &ClosedForms,
    emp: &EmpiricalMetrics,
    labels: (f64, f64),
) -> Vec<ValidationRow> {
    let t = params.slot_duration;
    let p_nl = analytics::p_nl(forms.p_start, forms.p_no_leave);
    let e_tcomm = analytics::e_tcomm(forms.p_start, forms.p_no_leave, forms.e_tl, t);
    let (rho_per_km, speed_kmh) = labels;
    let n = emp.n_slots.max(1) as f64;
    let row = |metric: &str, analytic: f64, e: Estimate, gating: bool| ValidationRow {
        rho_per_km,
        speed_kmh,
        slot_s: t,
        metric: metric.to_string(),
        analytic,
        empirical: e.value,
        se: e.se,
        z_score: e.z_score(analytic),
        gating,
    };
    let prob = |metric: &str, analytic: f64, e: Estimate, gating: bool| {
        let floor = (analytic * (1.0 - analytic) / n).max(0.0).sqrt();
        row(metric, analytic, Estimate { se: e.se.max(floor), ..e }, gating)
    };
    let mut rows = vec![
        prob("p_start", forms.p_start, emp.p_start, true),
        prob("p_start_spacing", forms.p_start, emp.p_start_spacing, false),
        prob("p_nl", p_nl, emp.p_nl, true),
    ];
    if let Some(tl) = emp.e_tl {
        rows.push(row("e_tl", forms.e_tl, tl, false));
        rows.push(row("e_tl_printed", forms.e_tl_printed, tl, false));
    }
    rows.extend([
        row("e_tcomm", e_tcomm, emp.e_tcomm, true),
        row("duration_ratio", e_tcomm / t, emp.duration_ratio, false),
        prob("p_nl_serve_nearest", p_nl, emp.p_nl_serve_nearest, false),
        row("e_tcomm_serve_nearest", e_tcomm, emp.e_tcomm_serve_nearest, false),
    ]);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rho: f64, speed: f64) -> RoadParams {
        RoadParams {
            rho,
            speed,
            slot_duration: 0.2,
            r_comm: 150.0,
        }
    }

    #[test]
    fn rejects_short_runs_and_bad_inputs() {
        assert_eq!(
            simulate_road(&params(0.02, 25.0), 10, 1),
            Err(RoadSimError::TooFewSlots { got: 10, min: 1000 })
        );
        assert!(matches!(
            simulate_road(&params(0.0, 25.0), 1000, 1),
            Err(RoadSimError::InvalidParameter { name: "rho", .. })
        ));
    }

    #[test]
    fn stationary_vehicle_is_frozen() {
        let tr = simulate_road(&params(0.005, 0.0), 2000, 3).unwrap();
        for s in &tr {
            assert_eq!(s.connected_at_start, tr[0].connected_at_start);
            assert!(!s.overtook_during_slot);
            assert!(s.connected_time_s == 0.0 || s.connected_time_s == 0.2);
        }
    }

    #[test]
    fn state_machine_is_sound() {
        let p = params(0.01, 36.0);
        let tr = simulate_road(&p, 20_000, 4).unwrap();
        for s in &tr {
            assert!((0.0..=p.slot_duration).contains(&s.connected_time_s));
            if s.overtook_during_slot || s.connected_time_s > 0.0 {
                assert!(s.connected_at_start);
            }
            if !s.connected_at_start {
                // idle slots stay idle even if a node comes into range
                assert_eq!(s.connected_time_s, 0.0);
            }
        }
        assert!(tr.iter().any(|s| s.overtook_during_slot));
        assert!(tr.iter().any(|s| !s.connected_at_start && s.ahead_m <= p.r_comm + p.speed * p.slot_duration));
    }

    #[test]
    fn sliding_window_keeps_poisson_density() {
        let mut road = Deployment::new(0.02, 0.0, 150.0, rng::stream(1, &[2]));
        let mut seen: Vec<f64> = Vec::new();
        for k in 0..100_000 {
            road.advance(k as f64 * 6.0, 151.0);
            for &p in &road.nodes {
                if seen.last().is_none_or(|&l| p > l) {
                    seen.push(p);
                }
            }
        }
        let inside: Vec<f64> = seen.into_iter().filter(|&p| p > 0.0 && p < 6e5).collect();
        // Poisson count: sd = sqrt(12000) ~ 110
        assert!((inside.len() as f64 - 12_000.0).abs() < 4.0 * 110.0, "{}", inside.len());
        let gaps: Vec<f64> = inside.windows(2).map(|w| w[1] - w[0]).collect();
        let cv = stats::variance(&gaps).sqrt() / stats::mean(&gaps);
        assert!((cv - 1.0).abs() < 0.05, "{cv}");
    }

    #[test]
    fn trivial_metrics() {
        let p = params(0.02, 25.0);
        let connected: Vec<SlotTrace> = (0..100)
            .map(|k| SlotTrace {
                slot_index: k,
                x_vehicle_m: 0.0,
                connected_at_start: true,
                overtook_during_slot: false,
                connected_time_s: 0.2,
                serving_distance_m: 50.0,
                ahead_m: 50.0,
                behind_m: 60.0,
                node_passed: false,
            })
            .collect();
        let m = empirical_metrics(&connected, &p);
        assert_eq!((m.p_start.value, m.p_nl.value), (1.0, 1.0));
        assert!((m.e_tcomm.value - 0.2).abs() < 1e-15);
        let empty: Vec<SlotTrace> = connected
            .iter()
            .map(|s| SlotTrace {
                connected_at_start: false,
                connected_time_s: 0.0,
                serving_distance_m: f64::NAN,
                ahead_m: f64::INFINITY,
                behind_m: f64::INFINITY,
                ..*s
            })
            .collect();
        let m = empirical_metrics(&empty, &p);
        assert_eq!((m.p_start.value, m.p_nl.value, m.e_tcomm.value), (0.0, 0.0, 0.0));
        assert!(m.e_tl.is_none());
    }

    #[test]
    fn same_seed_same_trace() {
        let p = params(0.02, 25.0);
        let a = simulate_road(&p, 5000, 9).unwrap();
        let b = simulate_road(&p, 5000, 9).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_trace_csv(&a, &mut x).unwrap();
        write_trace_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x).unwrap().starts_with(
            "slot,x_vehicle_m,serving_distance_m,connected_at_start,overtook,connected_time_s\n"
        ));
    }
}
