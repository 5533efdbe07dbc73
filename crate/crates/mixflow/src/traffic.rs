//! Vehicle population: spawning from stochastic demand, routing, human
//! longitudinal dynamics (IDM), and robot-vehicle motion under stop/go
//! commands.
//!
//! Positions are meters from the tail of the current segment; dynamics are
//! 1-D per segment with exact remainder carry across segment transitions.

use crate::net::{IntersectionId, RoadNetwork, SegmentId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Dynamics step, seconds.
pub const DT: f64 = 0.5;
/// Speed below which a vehicle counts as stationary, m/s.
pub const V_STOP: f64 = 0.1;
/// Physical vehicle length, m. With the IDM minimum gap this gives a
/// nominal stopped spacing of 7.5 m nose-to-nose.
pub const VEHICLE_LENGTH: f64 = 5.5;
/// Hardest braking any vehicle applies, m/s^2.
pub const MAX_BRAKE: f64 = 4.5;
/// Entries with a vehicle within this many meters of the start emit nothing.
pub const SPAWN_CLEARANCE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("leader gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("demand references intersection {0}, which is not an entry")]
    NotAnEntry(IntersectionId),
    #[error("invalid demand: {0}")]
    InvalidDemand(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Hv,
    Rv,
}

/// Standing stop/go command of a robot vehicle. Human vehicles always
/// carry `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingAction {
    None,
    Stop,
    Go,
}

pub type VehicleId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    /// Segment ids from an entry to an exit.
    pub route: Vec<SegmentId>,
    pub segment_index: usize,
    /// Meters from the tail of the current segment.
    pub longitudinal_pos: f64,
    pub speed: f64,
    /// Set while stationary inside a control zone.
    pub stationary_since: Option<f64>,
    /// Seconds spent stationary inside control zones, lifetime total.
    pub accumulated_wait: f64,
    pub pending_action: PendingAction,
    /// First time this vehicle stood at its current stop line (all-way-stop
    /// FIFO bookkeeping). Cleared on segment transition.
    pub stopline_arrival: Option<f64>,
    /// Last time a stop/go decision was issued to this RV.
    pub last_decision: Option<f64>,
    /// A go-committed RV finishes its crossing regardless of later commands.
    pub committed: bool,
}

impl VehicleState {
    pub fn current_segment(&self) -> SegmentId {
        self.route[self.segment_index]
    }

    pub fn next_segment(&self) -> Option<SegmentId> {
        self.route.get(self.segment_index + 1).copied()
    }

    pub fn previous_segment(&self) -> Option<SegmentId> {
        self.segment_index
            .checked_sub(1)
            .map(|i| self.route[i])
    }

    pub fn is_rv(&self) -> bool {
        self.class == VehicleClass::Rv
    }
}

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Desired speed v0, m/s.
    pub desired_speed: f64,
    /// Maximum acceleration a, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration b, m/s^2.
    pub comfortable_decel: f64,
    /// Minimum standstill gap s0, m.
    pub min_gap: f64,
    /// Desired time headway T, s.
    pub headway: f64,
    /// Acceleration exponent delta.
    pub accel_exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            desired_speed: 13.9,
            max_accel: 1.5,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            headway: 1.2,
            accel_exponent: 4.0,
        }
    }
}

/// IDM acceleration. `leader` is `(leader speed, net gap)`; free-road term
/// only when absent. The result is clamped to `[-MAX_BRAKE, max_accel]`.
pub fn idm_accel(
    v: f64,
    leader: Option<(f64, f64)>,
    p: &IdmParams,
) -> Result<f64, TrafficError> {
    let free = 1.0 - (v / p.desired_speed).powf(p.accel_exponent);
    let interaction = match leader {
        None => 0.0,
        Some((v_lead, gap)) => {
            if gap <= 0.0 {
                return Err(TrafficError::NonPositiveGap(gap));
            }
            let s_star = p.min_gap
                + v * p.headway
                + v * (v - v_lead) / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
            (s_star / gap).powi(2)
        }
    };
    let a = p.max_accel * (free - interaction);
    Ok(a.clamp(-MAX_BRAKE, p.max_accel))
}

/// Effective motion directive for one vehicle for one dynamics step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionDirective {
    /// Car-follow the given leader (or free-flow when none).
    FollowIdm { leader: Option<Leader> },
    /// Decelerate toward and never cross `stop_pos` on the current segment.
    HoldAt { stop_pos: f64 },
    /// Free-flow; ignore stop lines.
    Proceed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub speed: f64,
    /// Net gap (leader tail minus own nose), m.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdvanceOutcome {
    pub exited: bool,
    /// Set when the vehicle moved onto a new segment this step.
    pub entered_segment: Option<SegmentId>,
}

/// Whether a position on a segment lies inside the control zone of the
/// segment's head intersection (boundary heads have no control zone).
pub fn in_control_zone(net: &RoadNetwork, segment: SegmentId, pos: f64) -> bool {
    let seg = match net.segment(segment) {
        Ok(s) => s,
        Err(_) => return false,
    };
    let head = match net.intersection(seg.to) {
        Ok(i) => i,
        Err(_) => return false,
    };
    !head.is_boundary() && (seg.length - pos) <= head.control_zone_radius
}

/// Advance one vehicle by `dt` under `directive` using semi-implicit Euler:
/// `v <- clamp(v + a dt, 0, v_eff)`, `x <- x + v dt`, with exact remainder
/// carry on segment transitions. Also applies the waiting rule: the wait
/// clock accrues while the vehicle is stationary inside a control zone.
///
/// `now` is the time at the start of the step; wait gained here is
/// attributed to `now + dt` by the caller.
pub fn advance(
    vehicle: &mut VehicleState,
    net: &RoadNetwork,
    directive: &MotionDirective,
    idm: &IdmParams,
    dt: f64,
    now: f64,
) -> AdvanceOutcome {
    let seg = net
        .segment(vehicle.current_segment())
        .expect("vehicle segment exists");
    let mut p = *idm;
    p.desired_speed = p.desired_speed.min(seg.speed_limit);

    let accel = match directive {
        MotionDirective::FollowIdm { leader } => {
            let l = leader.map(|l| (l.speed, l.gap.max(0.01)));
            idm_accel(vehicle.speed, l, &p).expect("gap made positive")
        }
        MotionDirective::Proceed => idm_accel(vehicle.speed, None, &p).expect("no leader"),
        MotionDirective::HoldAt { stop_pos } => {
            let dist = stop_pos - vehicle.longitudinal_pos;
            if dist <= 0.0 {
                // At (or numerically past) the line: stand still.
                vehicle.longitudinal_pos = vehicle.longitudinal_pos.min(*stop_pos);
                vehicle.speed = 0.0;
                -MAX_BRAKE
            } else {
                // Virtual stopped leader with the gap offset by s0 so the
                // equilibrium rest position is exactly the line.
                idm_accel(vehicle.speed, Some((0.0, dist + p.min_gap)), &p)
                    .expect("gap positive")
            }
        }
    };

    let mut outcome = AdvanceOutcome::default();
    if !(matches!(directive, MotionDirective::HoldAt { stop_pos } if *stop_pos <= vehicle.longitudinal_pos))
    {
        vehicle.speed = (vehicle.speed + accel * dt).clamp(0.0, p.desired_speed);
        vehicle.longitudinal_pos += vehicle.speed * dt;
    }

    if let MotionDirective::HoldAt { stop_pos } = directive {
        if vehicle.longitudinal_pos >= *stop_pos {
            vehicle.longitudinal_pos = *stop_pos;
            vehicle.speed = 0.0;
        } else if *stop_pos - vehicle.longitudinal_pos <= 0.3 && vehicle.speed <= 0.3 {
            // The IDM approach is asymptotic; snap the final crawl so the
            // vehicle comes to a definite rest at the line.
            vehicle.longitudinal_pos = *stop_pos;
            vehicle.speed = 0.0;
        }
    }

    // Segment transitions with remainder carry.
    loop {
        let seg = net
            .segment(vehicle.current_segment())
            .expect("vehicle segment exists");
        if vehicle.longitudinal_pos <= seg.length {
            break;
        }
        match vehicle.next_segment() {
            None => {
                outcome.exited = true;
                return outcome;
            }
            Some(next) => {
                vehicle.longitudinal_pos -= seg.length;
                vehicle.segment_index += 1;
                vehicle.pending_action = if vehicle.is_rv() {
                    PendingAction::None
                } else {
                    vehicle.pending_action
                };
                vehicle.committed = false;
                vehicle.stopline_arrival = None;
                outcome.entered_segment = Some(next);
            }
        }
    }

    // Waiting rule: clock runs while stationary inside a control zone.
    let stopped_in_zone = vehicle.speed < V_STOP
        && in_control_zone(net, vehicle.current_segment(), vehicle.longitudinal_pos);
    if stopped_in_zone {
        if vehicle.stationary_since.is_none() {
            vehicle.stationary_since = Some(now);
        }
        vehicle.accumulated_wait += dt;
    } else {
        vehicle.stationary_since = None;
    }

    outcome
}

// ---------------------------------------------------------------------------
// Demand
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDemand {
    pub intersection_id: IntersectionId,
    /// Arrival rate, vehicles/second.
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    pub entries: Vec<EntryDemand>,
    /// Fraction of spawned vehicles that are robot vehicles.
    pub rv_penetration: f64,
    pub seed: u64,
}

impl DemandConfig {
    /// The same rate at every entry of `net`.
    pub fn uniform(net: &RoadNetwork, rate: f64, rv_penetration: f64, seed: u64) -> Self {
        DemandConfig {
            entries: net
                .entries()
                .iter()
                .map(|&id| EntryDemand {
                    intersection_id: id,
                    rate,
                })
                .collect(),
            rv_penetration,
            seed,
        }
    }

    pub fn validate(&self, net: &RoadNetwork) -> Result<(), TrafficError> {
        if !(0.0..=1.0).contains(&self.rv_penetration) {
            return Err(TrafficError::InvalidDemand(format!(
                "rv_penetration {} outside [0, 1]",
                self.rv_penetration
            )));
        }
        for e in &self.entries {
            if e.rate < 0.0 {
                return Err(TrafficError::InvalidDemand(format!(
                    "negative rate {} at entry {}",
                    e.rate, e.intersection_id
                )));
            }
            if !net.entries().contains(&e.intersection_id) {
                return Err(TrafficError::NotAnEntry(e.intersection_id));
            }
        }
        Ok(())
    }

    /// Copy with every vehicle human-driven (used by the HV-only baselines).
    pub fn without_rvs(&self) -> Self {
        DemandConfig {
            rv_penetration: 0.0,
            ..self.clone()
        }
    }
}

/// Precomputed shortest routes between every (entry, exit) pair.
#[derive(Debug, Clone)]
pub struct RouteTable {
    routes: BTreeMap<(IntersectionId, IntersectionId), Vec<SegmentId>>,
    exits: Vec<IntersectionId>,
}

impl RouteTable {
    pub fn build(net: &RoadNetwork) -> Self {
        let mut routes = BTreeMap::new();
        for &entry in net.entries() {
            for &exit in net.exits() {
                if entry == exit {
                    continue;
                }
                if let Some(path) = net.shortest_path(entry, exit) {
                    routes.insert((entry, exit), path);
                }
            }
        }
        RouteTable {
            routes,
            exits: net.exits().to_vec(),
        }
    }

    pub fn route(&self, entry: IntersectionId, exit: IntersectionId) -> Option<&[SegmentId]> {
        self.routes.get(&(entry, exit)).map(Vec::as_slice)
    }
}

/// One spawning sweep over all entries. Each entry independently emits a
/// vehicle with probability `1 - exp(-rate * dt)`; the class is RV with
/// probability `rv_penetration`, and the route is the shortest path to a
/// uniformly chosen exit (never the entry itself). Entries reported blocked
/// by `is_blocked` emit nothing this step; the arrival draw is still
/// consumed so the stream stays aligned.
pub fn spawn_step(
    demand: &DemandConfig,
    net: &RoadNetwork,
    routes: &RouteTable,
    rng: &mut ChaCha8Rng,
    dt: f64,
    is_blocked: impl Fn(IntersectionId) -> bool,
    next_id: &mut VehicleId,
) -> Vec<VehicleState> {
    let mut spawned = Vec::new();
    for e in &demand.entries {
        let p_arrival = 1.0 - (-e.rate * dt).exp();
        let arrived = rng.random::<f64>() < p_arrival;
        if !arrived {
            continue;
        }
        if is_blocked(e.intersection_id) {
            continue; // deferred silently
        }
        let class = if rng.random::<f64>() < demand.rv_penetration {
            VehicleClass::Rv
        } else {
            VehicleClass::Hv
        };
        let candidates: Vec<IntersectionId> = routes
            .exits
            .iter()
            .copied()
            .filter(|&x| x != e.intersection_id)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let exit = candidates[rng.random_range(0..candidates.len())];
        let Some(route) = routes.route(e.intersection_id, exit) else {
            continue;
        };
        let first = net.segment(route[0]).expect("route segment exists");
        let idm = IdmParams::default();
        let v = idm.desired_speed.min(first.speed_limit);
        spawned.push(VehicleState {
            id: *next_id,
            class,
            route: route.to_vec(),
            segment_index: 0,
            longitudinal_pos: 0.0,
            speed: v,
            stationary_since: None,
            accumulated_wait: 0.0,
            pending_action: PendingAction::None,
            stopline_arrival: None,
            last_decision: None,
            committed: false,
        });
        *next_id += 1;
    }
    spawned
}
