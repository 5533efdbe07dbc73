//! Non-learned baseline behaviors: pre-timed signal plans, all-way-stop
//! human behavior for unsignalized intersections, and a scripted random
//! stop/go policy for testing and ablations.
//!
//! The learned local baseline is *not* here: it is the regular agent stack
//! with the neighbor weight set to zero, so the reward code has a single
//! source of truth.

use crate::net::{Direction, IntersectionId, RoadNetwork};
use crate::sim::{RvCommand, WorldState};
use crate::traffic::VehicleId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid signal plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SignalPhase {
    /// Approach directions served green during this phase.
    pub served: Vec<Direction>,
    pub green: f64,
    /// All-red clearance after the green.
    pub all_red: f64,
}

/// Fixed-cycle signal plan. Phase durations must sum to the cycle length
/// and every approach must be served in at least one phase.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SignalPlan {
    pub cycle_length: f64,
    pub phases: Vec<SignalPhase>,
}

impl SignalPlan {
    pub fn validate(&self, legs: &[Direction]) -> Result<(), ControllerError> {
        if self.phases.is_empty() {
            return Err(ControllerError::InvalidPlan("no phases".into()));
        }
        let total: f64 = self.phases.iter().map(|p| p.green + p.all_red).sum();
        if (total - self.cycle_length).abs() > 1e-9 {
            return Err(ControllerError::InvalidPlan(format!(
                "phase durations sum to {total}, cycle is {}",
                self.cycle_length
            )));
        }
        for p in &self.phases {
            if p.green <= 0.0 || p.all_red < 0.0 {
                return Err(ControllerError::InvalidPlan(format!(
                    "bad phase durations green={} all_red={}",
                    p.green, p.all_red
                )));
            }
        }
        for &leg in legs {
            if !self.phases.iter().any(|p| p.served.contains(&leg)) {
                return Err(ControllerError::InvalidPlan(format!(
                    "approach {leg:?} never served"
                )));
            }
        }
        Ok(())
    }

    /// Default pre-timed plan: 60 s cycle, two phases of 28 s green plus
    /// 2 s all-red. Four-way pairs N/S then E/W; three-way serves the
    /// opposite pair together and the stem alone.
    pub fn default_for_legs(legs: &[Direction]) -> SignalPlan {
        let set: BTreeSet<Direction> = legs.iter().copied().collect();
        let (first, second): (Vec<Direction>, Vec<Direction>) = if set.len() == 4 {
            (
                vec![Direction::North, Direction::South],
                vec![Direction::East, Direction::West],
            )
        } else {
            let stem = legs
                .iter()
                .copied()
                .find(|d| !set.contains(&d.opposite()))
                .expect("a three-leg set has exactly one unpaired direction");
            let pair: Vec<Direction> = legs.iter().copied().filter(|&d| d != stem).collect();
            (pair, vec![stem])
        };
        SignalPlan {
            cycle_length: 60.0,
            phases: vec![
                SignalPhase {
                    served: first,
                    green: 28.0,
                    all_red: 2.0,
                },
                SignalPhase {
                    served: second,
                    green: 28.0,
                    all_red: 2.0,
                },
            ],
        }
    }
}

/// Approaches with a green indication at time `t`. Empty during all-red
/// clearance.
pub fn signal_state(plan: &SignalPlan, t: f64) -> BTreeSet<Direction> {
    let mut offset = t.rem_euclid(plan.cycle_length);
    for phase in &plan.phases {
        if offset < phase.green {
            return phase.served.iter().copied().collect();
        }
        offset -= phase.green;
        if offset < phase.all_red {
            return BTreeSet::new();
        }
        offset -= phase.all_red;
    }
    BTreeSet::new()
}

/// Parameters of the all-way-stop behavior.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GapAcceptanceParams {
    /// Minimum time since a conflicting movement entered the core before a
    /// new leader may be released.
    pub critical_entry_headway: f64,
    /// Mandatory standstill at the stop line before proceeding.
    pub stopline_pause: f64,
}

impl Default for GapAcceptanceParams {
    fn default() -> Self {
        GapAcceptanceParams {
            critical_entry_headway: 1.0,
            stopline_pause: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Hold,
    Proceed,
}

/// All-way-stop release rule for a queue leader standing at the stop line:
/// after the mandatory pause, it proceeds iff the core holds no conflicting
/// movement, no conflicting entry is more recent than the critical headway,
/// and no conflicting-approach leader arrived earlier (FIFO by stop-line
/// arrival, ties broken by approach index N < E < S < W).
pub fn allway_stop_decision(
    world: &WorldState,
    vehicle: VehicleId,
    gap: &GapAcceptanceParams,
) -> StopDecision {
    let Some(v) = world.vehicle(vehicle) else {
        return StopDecision::Hold;
    };
    let Some(my_movement) = world.movement_ahead(v) else {
        // Boundary head or route end: nothing to yield to.
        return StopDecision::Proceed;
    };
    let Some(arrival) = v.stopline_arrival else {
        return StopDecision::Hold; // has not completed the stop yet
    };
    let now = world.time();
    if now - arrival < gap.stopline_pause {
        return StopDecision::Hold;
    }

    let seg = world.net().segment(v.current_segment()).expect("exists");
    let intersection = seg.to;
    let Some(cm) = world.conflict_matrix(intersection) else {
        return StopDecision::Proceed;
    };

    for entry in world.core_entries(intersection) {
        if entry.vehicle != vehicle && cm.conflicts(entry.movement, my_movement) {
            return StopDecision::Hold;
        }
    }
    for &(movement, entered_at) in world.recent_core_entries(intersection) {
        if cm.conflicts(movement, my_movement) && now - entered_at < gap.critical_entry_headway {
            return StopDecision::Hold;
        }
    }

    let node = world.net().intersection(intersection).expect("exists");
    let my_dir = my_movement.from;
    for (dir, _) in node.approaches() {
        if *dir == my_dir {
            continue;
        }
        let Ok(Some(other_id)) = world.queue_leader(intersection, *dir) else {
            continue;
        };
        let other = world.vehicle(other_id).expect("leader exists");
        let Some(other_arrival) = other.stopline_arrival else {
            continue;
        };
        let Some(other_movement) = world.movement_ahead(other) else {
            continue;
        };
        if !cm.conflicts(other_movement, my_movement) {
            continue;
        }
        if other_arrival < arrival
            || (other_arrival == arrival && dir.index() < my_dir.index())
        {
            return StopDecision::Hold;
        }
    }
    StopDecision::Proceed
}

/// Unbiased scripted stop/go draw from the given stream.
pub fn random_rv_policy(rng: &mut impl Rng) -> RvCommand {
    if rng.random::<f64>() < 0.5 {
        RvCommand::Go
    } else {
        RvCommand::Stop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Signalized,
    Unsignalized,
}

/// Baseline control state handed to the world stepper. RL modes use
/// `unsignalized` human behavior with commands injected from outside.
#[derive(Debug, Clone)]
pub struct ControlContext {
    pub mode: ControlMode,
    pub plans: BTreeMap<IntersectionId, SignalPlan>,
    pub gap: GapAcceptanceParams,
}

impl ControlContext {
    pub fn unsignalized() -> Self {
        ControlContext {
            mode: ControlMode::Unsignalized,
            plans: BTreeMap::new(),
            gap: GapAcceptanceParams::default(),
        }
    }

    /// Default pre-timed plans at every internal intersection.
    pub fn signalized(net: &RoadNetwork) -> Self {
        let plans = net
            .intersections()
            .filter(|i| !i.is_boundary())
            .map(|i| (i.id, SignalPlan::default_for_legs(&i.legs())))
            .collect();
        ControlContext {
            mode: ControlMode::Signalized,
            plans,
            gap: GapAcceptanceParams::default(),
        }
    }

    pub fn with_plans(
        net: &RoadNetwork,
        plans: BTreeMap<IntersectionId, SignalPlan>,
    ) -> Result<Self, ControllerError> {
        for (id, plan) in &plans {
            let node = net
                .intersection(*id)
                .map_err(|e| ControllerError::InvalidPlan(e.to_string()))?;
            plan.validate(&node.legs())?;
        }
        Ok(ControlContext {
            mode: ControlMode::Signalized,
            plans,
            gap: GapAcceptanceParams::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::generate_grid;
    use crate::seeding::{rng_for, Stream};
    use crate::sim::{RvCommand, WorldState};
    use crate::traffic::{DemandConfig, IdmParams};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn two_phase_plan() -> SignalPlan {
        SignalPlan::default_for_legs(&Direction::ALL)
    }

    #[test]
    fn schedule_arithmetic() {
        let plan = two_phase_plan();
        plan.validate(&Direction::ALL).unwrap();
        // t = 45 is inside the second phase's green (30..58): EW green.
        let greens = signal_state(&plan, 45.0);
        assert!(greens.contains(&Direction::East) && greens.contains(&Direction::West));
        assert!(!greens.contains(&Direction::North));
        // t = 29 is in the first clearance: all red.
        assert!(signal_state(&plan, 29.0).is_empty());
        // Periodicity.
        assert_eq!(signal_state(&plan, 60.0), signal_state(&plan, 0.0));
        for k in 0..240 {
            let t = k as f64 * 0.5;
            assert_eq!(
                signal_state(&plan, t),
                signal_state(&plan, t + plan.cycle_length)
            );
        }
    }

    #[test]
    fn three_way_plan_serves_stem_alone() {
        let legs = [Direction::North, Direction::East, Direction::South];
        let plan = SignalPlan::default_for_legs(&legs);
        plan.validate(&legs).unwrap();
        assert_eq!(plan.phases[0].served, vec![Direction::North, Direction::South]);
        assert_eq!(plan.phases[1].served, vec![Direction::East]);
    }

    #[test]
    fn invalid_plans_rejected() {
        let mut plan = two_phase_plan();
        plan.cycle_length = 59.0;
        assert!(plan.validate(&Direction::ALL).is_err());

        let mut plan = two_phase_plan();
        plan.phases[1].served = vec![Direction::East]; // West never served
        assert!(plan.validate(&Direction::ALL).is_err());
    }

    #[test]
    fn random_policy_is_unbiased_and_reproducible() {
        let mut rng = rng_for(0, Stream::RandomPolicy, 0);
        let n = 10_000;
        let gos = (0..n)
            .filter(|_| random_rv_policy(&mut rng) == RvCommand::Go)
            .count();
        let p = gos as f64 / n as f64;
        assert!((p - 0.5).abs() <= 0.015, "p(Go) = {p}");

        let draw = |seed| -> Vec<RvCommand> {
            let mut rng = rng_for(seed, Stream::RandomPolicy, 0);
            (0..64).map(|_| random_rv_policy(&mut rng)).collect()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    fn hv_world(rate: f64, seed: u64) -> WorldState {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let demand = DemandConfig::uniform(&net, rate, 0.0, seed);
        WorldState::new(net, demand, IdmParams::default(), (0.0, f64::INFINITY), 0)
    }

    #[test]
    fn sole_vehicle_pauses_then_proceeds() {
        let mut w = hv_world(0.0, 1);
        let route = w.net().shortest_path(1, 3).unwrap();
        crate::sim::testutil::stage_vehicle(
            &mut w,
            0,
            crate::traffic::VehicleClass::Hv,
            route,
            0,
            120.0,
            13.9,
        );
        let ctl = ControlContext::unsignalized();
        let mut crossed = false;
        let mut paused_at: Option<f64> = None;
        let mut released_at: Option<f64> = None;
        for _ in 0..200 {
            w.step(&BTreeMap::new(), &ctl).unwrap();
            let Some(v) = w.vehicle(0) else {
                crossed = true;
                break;
            };
            if v.stopline_arrival.is_some() && paused_at.is_none() {
                paused_at = v.stopline_arrival;
            }
            if paused_at.is_some() && released_at.is_none() && v.speed > 0.5 {
                released_at = Some(w.time());
            }
        }
        assert!(crossed, "vehicle should clear the network");
        let (paused, released) = (paused_at.unwrap(), released_at.unwrap());
        assert!(
            released - paused >= ctl.gap.stopline_pause,
            "pause {:.2} shorter than required",
            released - paused
        );
    }

    fn first_to_cross(w: &mut WorldState, ctl: &ControlContext, ids: [VehicleId; 2]) -> Option<VehicleId> {
        for _ in 0..400 {
            w.step(&BTreeMap::new(), ctl).unwrap();
            for id in ids {
                let gone_or_past = match w.vehicle(id) {
                    None => true,
                    Some(v) => v.segment_index > 0,
                };
                if gone_or_past {
                    return Some(id);
                }
            }
        }
        None
    }

    #[test]
    fn fifo_earlier_arrival_proceeds_first() {
        let mut w = hv_world(0.0, 1);
        // Conflicting through movements from North and East. The northern
        // vehicle already stands at its stop line; the eastern one is still
        // approaching, so its arrival is strictly later.
        let center = w.net().intersection(0).unwrap();
        let n_in = center.approach_from(Direction::North).unwrap();
        let s_out = center.departure_toward(Direction::South).unwrap();
        let e_in = center.approach_from(Direction::East).unwrap();
        let w_out = center.departure_toward(Direction::West).unwrap();
        let line = w.stop_line(n_in);
        crate::sim::testutil::stage_vehicle(
            &mut w,
            1,
            crate::traffic::VehicleClass::Hv,
            vec![n_in, s_out],
            0,
            line,
            0.0,
        );
        crate::sim::testutil::stage_vehicle(
            &mut w,
            2,
            crate::traffic::VehicleClass::Hv,
            vec![e_in, w_out],
            0,
            140.0,
            13.9,
        );
        let ctl = ControlContext::unsignalized();
        let first = first_to_cross(&mut w, &ctl, [1, 2]);
        assert_eq!(first, Some(1), "earlier arrival must cross first");
    }

    #[test]
    fn fifo_tie_breaks_by_approach_index() {
        // Both leaders stand at their stop lines from the start, so both
        // register the same arrival instant; North outranks East.
        let mut w = hv_world(0.0, 1);
        let center = w.net().intersection(0).unwrap();
        let n_in = center.approach_from(Direction::North).unwrap();
        let s_out = center.departure_toward(Direction::South).unwrap();
        let e_in = center.approach_from(Direction::East).unwrap();
        let w_out = center.departure_toward(Direction::West).unwrap();
        let line = w.stop_line(n_in);
        crate::sim::testutil::stage_vehicle(
            &mut w,
            1,
            crate::traffic::VehicleClass::Hv,
            vec![e_in, w_out],
            0,
            line,
            0.0,
        );
        crate::sim::testutil::stage_vehicle(
            &mut w,
            2,
            crate::traffic::VehicleClass::Hv,
            vec![n_in, s_out],
            0,
            line,
            0.0,
        );
        let ctl = ControlContext::unsignalized();
        let first = first_to_cross(&mut w, &ctl, [1, 2]);
        assert_eq!(first, Some(2), "north must win the tie");
    }

    #[test]
    fn liveness_under_bounded_demand() {
        // No queue leader starves: over 10,000 steps with bounded demand the
        // largest accumulated wait stays far below the 300 s bound.
        let mut w = hv_world(0.05, 3);
        let ctl = ControlContext::unsignalized();
        let mut max_wait = 0.0f64;
        for _ in 0..10_000 {
            w.step(&BTreeMap::new(), &ctl).unwrap();
            for v in w.vehicles() {
                max_wait = max_wait.max(v.accumulated_wait);
            }
        }
        assert!(w.spawned_total() > 100);
        assert!(max_wait < 300.0, "max wait {max_wait}");
    }
}
