//! The decision surface for robot vehicles: per-RV observations, the
//! three-term reward, decision-point scheduling, and a reset/step episode
//! API over the simulator.
//!
//! Observations are exact functions of world state (no observation noise).
//! Decisions are issued to approach queue leaders once per second; the
//! world advances in two 0.5 s dynamics steps per decision interval.

use crate::controllers::ControlContext;
use crate::net::{Direction, IntersectionId, RoadNetwork};
use crate::sim::{ConflictEvent, RvCommand, SimError, WorldState, CORE_RADIUS, NOMINAL_SPACING};
use crate::traffic::{DemandConfig, IdmParams, VehicleId, DT};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Observation vector length: four direction blocks of three features plus
/// the downstream summary.
pub const OBS_DIM: usize = 16;
/// Wait normalization cap, seconds.
pub const WAIT_CAP: f64 = 60.0;
/// Seconds between successive commands to the same RV.
pub const DECISION_INTERVAL: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("vehicle {0} does not exist")]
    UnknownVehicle(VehicleId),
    #[error("vehicle {0} is not inside a control zone")]
    NotInZone(VehicleId),
    #[error("action keys do not match decision points (missing {missing:?}, extra {extra:?})")]
    ActionKeyMismatch {
        missing: Vec<VehicleId>,
        extra: Vec<VehicleId>,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}

/// The binary action an RV chooses at a decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stop,
    Go,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Stop, Action::Go];

    pub fn index(self) -> usize {
        match self {
            Action::Stop => 0,
            Action::Go => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Stop,
            1 => Action::Go,
            _ => panic!("action index {i} out of range"),
        }
    }
}

impl From<Action> for RvCommand {
    fn from(a: Action) -> RvCommand {
        match a {
            Action::Stop => RvCommand::Stop,
            Action::Go => RvCommand::Go,
        }
    }
}

/// Normalized per-direction features of an approach.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DirectionFeatures {
    /// Queue length over zone capacity, clamped to [0, 1].
    pub q: f64,
    /// Average wait over the 60 s cap, clamped to [0, 1].
    pub w: f64,
    /// 1 iff any vehicle from this approach occupies the core.
    pub o: f64,
}

/// Fixed-length observation: N, E, S, W feature blocks (absent directions
/// zero-filled) followed by the downstream summary
/// (mean queue, mean wait, core occupancy, RV share).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn zeros() -> Self {
        Observation([0.0; OBS_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight of the neighbor term.
    pub alpha: f64,
    /// Desired RV share downstream.
    pub p_target: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 1.0,
            p_target: 0.6,
        }
    }
}

/// The decomposed reward of one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub local: f64,
    pub conflict: f64,
    pub neighbor: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Three-term reward: the local term pushes against waiting
/// (`-w_d` on Stop, `+w_d` on Go), a conflict costs a flat `-1`, and the
/// neighbor term pays `max(0, p_target - p_current)` for going toward an
/// RV-poor downstream, scaled by `alpha`.
pub fn compute_reward(
    action: Action,
    w_d: f64,
    conflict_occurred: bool,
    p_current: f64,
    cfg: &RewardConfig,
) -> RewardTerms {
    debug_assert!(w_d >= 0.0);
    debug_assert!((0.0..=1.0).contains(&p_current));
    let local = match action {
        Action::Stop => -w_d,
        Action::Go => w_d,
    };
    let conflict = if conflict_occurred { -1.0 } else { 0.0 };
    let neighbor = match action {
        Action::Go => (cfg.p_target - p_current).max(0.0),
        Action::Stop => 0.0,
    };
    RewardTerms {
        local,
        conflict,
        neighbor,
        alpha: cfg.alpha,
        total: local + conflict + cfg.alpha * neighbor,
    }
}

/// RV share among vehicles in the control zones of `intersection`.
/// Returns `p_target` for an empty or boundary downstream so the neighbor
/// term is neutral there.
pub fn rv_share_downstream(
    world: &WorldState,
    intersection: IntersectionId,
    p_target: f64,
) -> f64 {
    world.rv_share_in_zones(intersection, p_target)
}

fn zone_capacity(zone_radius: f64) -> f64 {
    (zone_radius / NOMINAL_SPACING).floor().max(1.0)
}

fn direction_features(
    world: &WorldState,
    intersection: IntersectionId,
    dir: Direction,
) -> Result<DirectionFeatures, MdpError> {
    let q = world.queue_length(intersection, dir)? as f64;
    let w = world.avg_wait(intersection, dir)?;
    let cap = zone_capacity(
        world
            .net()
            .intersection(intersection)?
            .control_zone_radius,
    );
    let o = world
        .core_entries(intersection)
        .iter()
        .any(|e| e.movement.from == dir);
    Ok(DirectionFeatures {
        q: (q / cap).min(1.0),
        w: (w / WAIT_CAP).min(1.0),
        o: if o { 1.0 } else { 0.0 },
    })
}

/// Observation for an RV inside a control zone: the four direction blocks
/// of its current intersection plus the downstream summary along its route.
/// A boundary downstream contributes all zeros.
pub fn build_observation(
    world: &WorldState,
    rv: VehicleId,
    reward_cfg: &RewardConfig,
) -> Result<Observation, MdpError> {
    let v = world.vehicle(rv).ok_or(MdpError::UnknownVehicle(rv))?;
    let seg = world.net().segment(v.current_segment())?;
    let head = world.net().intersection(seg.to)?;
    if head.is_boundary()
        || (seg.length - v.longitudinal_pos) > head.control_zone_radius
    {
        return Err(MdpError::NotInZone(rv));
    }

    let mut values = [0.0; OBS_DIM];
    for dir in Direction::ALL {
        if head.approach_from(dir).is_none() {
            continue; // absent direction stays zero-filled
        }
        let f = direction_features(world, head.id, dir)?;
        let base = dir.index() * 3;
        values[base] = f.q;
        values[base + 1] = f.w;
        values[base + 2] = f.o;
    }

    if let Some(next) = v.next_segment() {
        let downstream = world.net().downstream(head.id, next)?;
        let node = world.net().intersection(downstream)?;
        if !node.is_boundary() {
            let mut q_sum = 0.0;
            let mut w_sum = 0.0;
            let mut n = 0.0;
            for (dir, _) in node.approaches() {
                let f = direction_features(world, downstream, *dir)?;
                q_sum += f.q;
                w_sum += f.w;
                n += 1.0;
            }
            let occupied = !world.core_entries(downstream).is_empty();
            values[12] = q_sum / n;
            values[13] = w_sum / n;
            values[14] = if occupied { 1.0 } else { 0.0 };
            values[15] = rv_share_downstream(world, downstream, reward_cfg.p_target);
        }
    }

    Ok(Observation(values))
}

/// A queue-leader RV eligible for a fresh stop/go command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionPoint {
    pub rv: VehicleId,
    pub intersection: IntersectionId,
    pub approach: Direction,
}

/// All RVs that lead their approach queue inside a control zone, are not
/// committed through the core, and whose last decision is at least one
/// decision interval old.
pub fn decision_points(world: &WorldState) -> Vec<DecisionPoint> {
    let mut out = Vec::new();
    let now = world.time();
    for node in world.net().intersections().filter(|i| !i.is_boundary()) {
        for (dir, _) in node.approaches() {
            let Ok(Some(leader)) = world.queue_leader(node.id, *dir) else {
                continue;
            };
            let v = world.vehicle(leader).expect("leader exists");
            if !v.is_rv() || v.committed {
                continue;
            }
            let due = match v.last_decision {
                None => true,
                Some(t) => now - t >= DECISION_INTERVAL - 1e-9,
            };
            if due {
                out.push(DecisionPoint {
                    rv: leader,
                    intersection: node.id,
                    approach: *dir,
                });
            }
        }
    }
    out
}

/// Per-RV result of one environment step.
#[derive(Debug, Clone)]
pub struct RvOutcome {
    pub rv: VehicleId,
    /// Observation at the decision instant the action applied to.
    pub observation: Observation,
    pub reward: RewardTerms,
    /// Episode horizon reached or the RV left the network.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct EnvStep {
    pub outcomes: Vec<RvOutcome>,
    pub decision_points: Vec<DecisionPoint>,
    pub events: Vec<ConflictEvent>,
    pub done: bool,
}

/// Episodic environment: one seeded world plus the reward configuration.
/// Human vehicles follow the unsignalized stop rules; robot vehicles follow
/// the actions supplied to [`Env::step`].
pub struct Env {
    world: WorldState,
    ctl: ControlContext,
    reward: RewardConfig,
    horizon: f64,
}

impl Env {
    pub fn reset(
        net: Arc<RoadNetwork>,
        demand: DemandConfig,
        idm: IdmParams,
        reward: RewardConfig,
        horizon: f64,
        window: (f64, f64),
        episode_seed: u64,
    ) -> (Self, Vec<DecisionPoint>) {
        let world = WorldState::new(net, demand, idm, window, episode_seed);
        let env = Env {
            world,
            ctl: ControlContext::unsignalized(),
            reward,
            horizon,
        };
        let dps = decision_points(&env.world);
        (env, dps)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn done(&self) -> bool {
        self.world.time() >= self.horizon
    }

    pub fn decision_points(&self) -> Vec<DecisionPoint> {
        if self.done() {
            Vec::new()
        } else {
            decision_points(&self.world)
        }
    }

    pub fn observe(&self, rv: VehicleId) -> Result<Observation, MdpError> {
        build_observation(&self.world, rv, &self.reward)
    }

    /// Apply exactly one action per current decision point, then advance one
    /// decision interval (two dynamics steps). Rewards are attributed to the
    /// acting RVs: the local term from their approach wait at the decision
    /// instant, the conflict term from events during the interval, and the
    /// neighbor term from the downstream RV share at the decision instant.
    pub fn step(&mut self, actions: &BTreeMap<VehicleId, Action>) -> Result<EnvStep, MdpError> {
        let dps = self.decision_points();
        let expected: Vec<VehicleId> = dps.iter().map(|d| d.rv).collect();
        let missing: Vec<VehicleId> = expected
            .iter()
            .copied()
            .filter(|id| !actions.contains_key(id))
            .collect();
        let extra: Vec<VehicleId> = actions
            .keys()
            .copied()
            .filter(|id| !expected.contains(id))
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(MdpError::ActionKeyMismatch { missing, extra });
        }

        // Snapshot decision-time quantities before the world moves.
        struct Pending {
            rv: VehicleId,
            action: Action,
            observation: Observation,
            w_d: f64,
            p_current: f64,
        }
        let mut pending = Vec::with_capacity(dps.len());
        for dp in &dps {
            let action = actions[&dp.rv];
            let observation = self.observe(dp.rv)?;
            let w_d = self.world.avg_wait(dp.intersection, dp.approach)?;
            let v = self.world.vehicle(dp.rv).expect("decision point vehicle");
            let p_current = match v.next_segment() {
                Some(next) => {
                    let downstream = self.world.net().downstream(dp.intersection, next)?;
                    rv_share_downstream(&self.world, downstream, self.reward.p_target)
                }
                None => self.reward.p_target,
            };
            pending.push(Pending {
                rv: dp.rv,
                action,
                observation,
                w_d,
                p_current,
            });
        }

        let commands: BTreeMap<VehicleId, RvCommand> = pending
            .iter()
            .map(|p| (p.rv, p.action.into()))
            .collect();
        let steps_per_decision = (DECISION_INTERVAL / DT).round() as usize;
        let mut events = Vec::new();
        for k in 0..steps_per_decision {
            let cmds = if k == 0 { commands.clone() } else { BTreeMap::new() };
            events.extend(self.world.step(&cmds, &self.ctl)?);
        }

        let done = self.done();
        let outcomes = pending
            .into_iter()
            .map(|p| {
                let conflict = events.iter().any(|e| e.involves(p.rv));
                let reward = compute_reward(p.action, p.w_d, conflict, p.p_current, &self.reward);
                let exited = self.world.vehicle(p.rv).is_none();
                RvOutcome {
                    rv: p.rv,
                    observation: p.observation,
                    reward,
                    done: done || exited,
                }
            })
            .collect();

        Ok(EnvStep {
            outcomes,
            decision_points: self.decision_points(),
            events,
            done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{generate_grid, net17_standin};
    use crate::sim::testutil::{route_through, set_wait, stage_vehicle};
    use crate::traffic::VehicleClass;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn approach(w: &WorldState, node: IntersectionId, dir: Direction) -> crate::net::SegmentId {
        w.net().intersection(node).unwrap().approach_from(dir).unwrap()
    }

    fn departure(w: &WorldState, node: IntersectionId, dir: Direction) -> crate::net::SegmentId {
        w.net().intersection(node).unwrap().departure_toward(dir).unwrap()
    }

    fn seg_len(w: &WorldState, seg: crate::net::SegmentId) -> f64 {
        w.net().segment(seg).unwrap().length
    }

    fn world_on(net: Arc<RoadNetwork>, seed: u64) -> WorldState {
        let demand = DemandConfig::uniform(&net, 0.0, 0.6, seed);
        WorldState::new(net, demand, IdmParams::default(), (0.0, f64::INFINITY), 0)
    }

    fn cfg(alpha: f64, p_target: f64) -> RewardConfig {
        RewardConfig { alpha, p_target }
    }

    #[test]
    fn reward_stop_pays_negative_wait() {
        let t = compute_reward(Action::Stop, 4.0, false, 0.3, &cfg(1.0, 0.6));
        assert_eq!((t.local, t.conflict, t.neighbor), (-4.0, 0.0, 0.0));
        assert_eq!(t.total, -4.0);
    }

    #[test]
    fn reward_go_earns_neighbor_term() {
        let t = compute_reward(Action::Go, 0.0, false, 0.4, &cfg(1.0, 0.6));
        assert_eq!((t.local, t.conflict), (0.0, 0.0));
        assert_abs_diff_eq!(t.neighbor, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(t.total, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn reward_conflict_and_clamped_neighbor() {
        let t = compute_reward(Action::Go, 4.0, true, 0.7, &cfg(1.0, 0.6));
        assert_eq!((t.local, t.conflict, t.neighbor), (4.0, -1.0, 0.0));
        assert_eq!(t.total, 3.0);
    }

    /// Independent brute-force reward table used by the oracle tests: the
    /// piecewise definition written out case by case.
    pub(crate) fn reward_oracle(
        action: Action,
        w_d: f64,
        conflict: bool,
        p_current: f64,
        alpha: f64,
        p_target: f64,
    ) -> (f64, f64, f64, f64) {
        let local = if matches!(action, Action::Stop) {
            -w_d
        } else {
            w_d
        };
        let conflict_term = if conflict { -1.0 } else { 0.0 };
        let neighbor = if matches!(action, Action::Go) {
            if p_target - p_current > 0.0 {
                p_target - p_current
            } else {
                0.0
            }
        } else {
            0.0
        };
        (
            local,
            conflict_term,
            neighbor,
            local + conflict_term + alpha * neighbor,
        )
    }

    #[test]
    fn reward_matches_enumerated_oracle() {
        for action in Action::ALL {
            for conflict in [false, true] {
                for w_d in [0.0, 1.0, 5.0, 60.0] {
                    for p_current in [0.0, 0.3, 0.6, 1.0] {
                        for alpha in [0.0, 0.5, 1.0] {
                            let c = cfg(alpha, 0.6);
                            let t = compute_reward(action, w_d, conflict, p_current, &c);
                            let (l, cf, n, total) =
                                reward_oracle(action, w_d, conflict, p_current, alpha, 0.6);
                            assert_eq!(t.local, l);
                            assert_eq!(t.conflict, cf);
                            assert_eq!(t.neighbor, n);
                            assert_eq!(t.total, total);
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn reward_decomposition_and_bounds(
            w_d in 0.0f64..120.0,
            p_current in 0.0f64..=1.0,
            alpha in 0.0f64..4.0,
            p_target in 0.0f64..=1.0,
            go in any::<bool>(),
            conflict in any::<bool>(),
        ) {
            let action = if go { Action::Go } else { Action::Stop };
            let c = cfg(alpha, p_target);
            let t = compute_reward(action, w_d, conflict, p_current, &c);
            // Exact decomposition.
            prop_assert_eq!(t.total, t.local + t.conflict + t.alpha * t.neighbor);
            // Neighbor bounds; zero on Stop.
            prop_assert!(t.neighbor >= 0.0 && t.neighbor <= p_target);
            if matches!(action, Action::Stop) {
                prop_assert_eq!(t.neighbor, 0.0);
            }
            prop_assert!(t.conflict == 0.0 || t.conflict == -1.0);
            // Alpha scales only the neighbor contribution; alpha = 0 is the
            // local baseline term-by-term.
            let base = compute_reward(action, w_d, conflict, p_current, &cfg(0.0, p_target));
            prop_assert_eq!(base.local, t.local);
            prop_assert_eq!(base.conflict, t.conflict);
            prop_assert_eq!(base.neighbor, t.neighbor);
            prop_assert_eq!(base.total, t.local + t.conflict);
        }
    }

    #[test]
    fn observation_empty_intersection_boundary_downstream_is_zero() {
        // Lone moving RV in the zone of the only internal intersection of a
        // 1x1 grid: every downstream is a boundary, so the vector is zero.
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let mut w = world_on(net, 1);
        let route = route_through(&w, 1, 2);
        let first_len = seg_len(&w, route[0]);
        stage_vehicle(&mut w, 0, VehicleClass::Rv, route.clone(), 0, first_len - 25.0, 5.0);
        let obs = build_observation(&w, 0, &cfg(1.0, 0.6)).unwrap();
        assert_eq!(obs, Observation::zeros());
    }

    #[test]
    fn observation_missing_direction_is_zero_padded() {
        // Node 0 of the 17-intersection stand-in is three-way (no South
        // leg); its South block stays zero whatever the traffic does.
        let net = Arc::new(net17_standin());
        let mut w = world_on(net, 1);
        assert!(w.net().intersection(0).unwrap().approach_from(Direction::South).is_none());

        // RV approaching node 0 from its west stub.
        let west_stub = w.net().downstream(0, departure(&w, 0, Direction::West)).unwrap();
        let route = route_through(&w, west_stub, 21); // any exit
        let first_len = seg_len(&w, route[0]);
        stage_vehicle(&mut w, 0, VehicleClass::Rv, route, 0, first_len - 20.0, 5.0);

        // Pile stopped traffic on the North approach.
        let n_in = approach(&w, 0, Direction::North);
        let out = departure(&w, 0, Direction::East);
        let len = seg_len(&w, n_in);
        stage_vehicle(&mut w, 1, VehicleClass::Hv, vec![n_in, out], 0, len - 10.0, 0.0);
        stage_vehicle(&mut w, 2, VehicleClass::Hv, vec![n_in, out], 0, len - 17.5, 0.0);

        let obs = build_observation(&w, 0, &cfg(1.0, 0.6)).unwrap();
        let south = Direction::South.index() * 3;
        assert_eq!(&obs.0[south..south + 3], &[0.0, 0.0, 0.0]);
        let north = Direction::North.index() * 3;
        assert!(obs.0[north] > 0.0, "north queue should be visible");
    }

    #[test]
    fn observation_staged_scenario_matches_hand_computation() {
        // Grid 1x2: RV decides at node 0, downstream is internal node 1.
        // North approach of node 0: two stopped vehicles with waits 4 and 8.
        // Node 1: a stopped RV (wait 6) and a moving HV on its North
        // approach. Expected vector computed by hand from the
        // normalization rules (capacity 4, wait cap 60).
        let net = Arc::new(generate_grid(1, 2, 200.0).unwrap());
        let mut w = world_on(net, 1);

        let west_stub = w.net().downstream(0, departure(&w, 0, Direction::West)).unwrap();
        let east_stub = w.net().downstream(1, departure(&w, 1, Direction::East)).unwrap();
        let route = route_through(&w, west_stub, east_stub);
        assert_eq!(w.net().segment(route[1]).unwrap().from, 0);
        assert_eq!(w.net().segment(route[1]).unwrap().to, 1);
        let first_len = seg_len(&w, route[0]);
        stage_vehicle(&mut w, 0, VehicleClass::Rv, route, 0, first_len - 15.0, 3.0);

        let n0_in = approach(&w, 0, Direction::North);
        let n0_out = departure(&w, 0, Direction::South);
        let len0 = seg_len(&w, n0_in);
        stage_vehicle(&mut w, 1, VehicleClass::Hv, vec![n0_in, n0_out], 0, len0 - 10.0, 0.0);
        stage_vehicle(&mut w, 2, VehicleClass::Hv, vec![n0_in, n0_out], 0, len0 - 17.5, 0.0);
        set_wait(&mut w, 1, 4.0);
        set_wait(&mut w, 2, 8.0);

        let n1_in = approach(&w, 1, Direction::North);
        let n1_out = departure(&w, 1, Direction::South);
        let len1 = seg_len(&w, n1_in);
        stage_vehicle(&mut w, 3, VehicleClass::Rv, vec![n1_in, n1_out], 0, len1 - 10.0, 0.0);
        stage_vehicle(&mut w, 4, VehicleClass::Hv, vec![n1_in, n1_out], 0, len1 - 20.0, 3.0);
        set_wait(&mut w, 3, 6.0);

        let obs = build_observation(&w, 0, &cfg(1.0, 0.6)).unwrap();
        let mut expected = [0.0; OBS_DIM];
        // North block of node 0: q = 2/4, w = mean(4,8)/60, o = 0.
        expected[0] = 0.5;
        expected[1] = 6.0 / 60.0;
        // Downstream node 1 summary: only its North approach is occupied:
        // q = 1/4 over 4 approaches; w = mean(6,0)/60 over 4 approaches.
        expected[12] = (1.0 / 4.0) / 4.0;
        expected[13] = (3.0 / 60.0) / 4.0;
        expected[14] = 0.0;
        expected[15] = 0.5; // 1 RV of 2 vehicles
        for (i, (a, e)) in obs.0.iter().zip(expected.iter()).enumerate() {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
            let _ = i;
        }
    }

    #[test]
    fn observation_requires_zone_membership() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let mut w = world_on(net, 1);
        let route = route_through(&w, 1, 2);
        stage_vehicle(&mut w, 0, VehicleClass::Rv, route, 0, 10.0, 5.0);
        assert!(matches!(
            build_observation(&w, 0, &cfg(1.0, 0.6)),
            Err(MdpError::NotInZone(0))
        ));
        assert!(matches!(
            build_observation(&w, 9, &cfg(1.0, 0.6)),
            Err(MdpError::UnknownVehicle(9))
        ));
    }

    #[test]
    fn observation_stays_in_unit_box_on_random_worlds() {
        let net = Arc::new(generate_grid(2, 2, 200.0).unwrap());
        let demand = DemandConfig::uniform(&net, 0.3, 0.6, 17);
        let mut w = WorldState::new(net, demand, IdmParams::default(), (0.0, f64::INFINITY), 0);
        let ctl = ControlContext::unsignalized();
        let mut checked = 0;
        for _ in 0..1500 {
            w.step(&std::collections::BTreeMap::new(), &ctl).unwrap();
            for dp in decision_points(&w) {
                let obs = build_observation(&w, dp.rv, &cfg(1.0, 0.6)).unwrap();
                for &x in obs.as_slice() {
                    assert!((0.0..=1.0).contains(&x), "feature {x} out of bounds");
                }
                checked += 1;
            }
        }
        assert!(checked > 50, "scenario produced too few observations");
    }

    #[test]
    fn rv_share_neutral_when_empty_and_ratio_otherwise() {
        let net = Arc::new(generate_grid(1, 2, 200.0).unwrap());
        let mut w = world_on(net, 1);
        assert_eq!(rv_share_downstream(&w, 1, 0.6), 0.6);

        let n1_in = approach(&w, 1, Direction::North);
        let n1_out = departure(&w, 1, Direction::South);
        let len1 = seg_len(&w, n1_in);
        stage_vehicle(&mut w, 1, VehicleClass::Rv, vec![n1_in, n1_out], 0, len1 - 10.0, 0.0);
        stage_vehicle(&mut w, 2, VehicleClass::Hv, vec![n1_in, n1_out], 0, len1 - 17.5, 0.0);
        assert_eq!(rv_share_downstream(&w, 1, 0.6), 0.5);
    }

    #[test]
    fn rv_share_matches_full_scan_oracle() {
        let net = Arc::new(generate_grid(2, 2, 200.0).unwrap());
        let demand = DemandConfig::uniform(&net, 0.3, 0.5, 23);
        let mut w = WorldState::new(net, demand, IdmParams::default(), (0.0, f64::INFINITY), 0);
        let ctl = ControlContext::unsignalized();
        for _ in 0..800 {
            w.step(&std::collections::BTreeMap::new(), &ctl).unwrap();
        }
        for node in w.net().intersections().filter(|i| !i.is_boundary()) {
            let mut total = 0usize;
            let mut rvs = 0usize;
            for v in w.vehicles() {
                let seg = w.net().segment(v.current_segment()).unwrap();
                if seg.to == node.id
                    && seg.length - v.longitudinal_pos <= node.control_zone_radius
                {
                    total += 1;
                    if v.is_rv() {
                        rvs += 1;
                    }
                }
            }
            let expected = if total == 0 {
                0.6
            } else {
                rvs as f64 / total as f64
            };
            assert_abs_diff_eq!(rv_share_downstream(&w, node.id, 0.6), expected);
        }
    }

    #[test]
    fn decision_points_empty_without_rvs() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let w = world_on(net, 1);
        assert!(decision_points(&w).is_empty());
    }

    #[test]
    fn decision_points_list_only_the_leader() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let mut w = world_on(net, 1);
        let n_in = approach(&w, 0, Direction::North);
        let s_out = departure(&w, 0, Direction::South);
        let len = seg_len(&w, n_in);
        stage_vehicle(&mut w, 1, VehicleClass::Rv, vec![n_in, s_out], 0, len - 10.0, 0.0);
        stage_vehicle(&mut w, 2, VehicleClass::Rv, vec![n_in, s_out], 0, len - 17.5, 0.0);
        let dps = decision_points(&w);
        assert_eq!(dps.len(), 1);
        assert_eq!(dps[0].rv, 1);
        assert_eq!(dps[0].approach, Direction::North);
    }

    #[test]
    fn decision_points_respect_commitment_and_interval() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let mut w = world_on(net.clone(), 1);
        let n_in = approach(&w, 0, Direction::North);
        let s_out = departure(&w, 0, Direction::South);
        let len = seg_len(&w, n_in);
        stage_vehicle(&mut w, 1, VehicleClass::Rv, vec![n_in, s_out], 0, len - 10.0, 0.0);
        assert_eq!(decision_points(&w).len(), 1);

        // A committed RV is excluded even while still behind the line.
        {
            let mut w2 = world_on(net.clone(), 1);
            stage_vehicle(&mut w2, 1, VehicleClass::Rv, vec![n_in, s_out], 0, len - 10.0, 0.0);
            let ctl = ControlContext::unsignalized();
            let mut cmds = std::collections::BTreeMap::new();
            cmds.insert(1u64, RvCommand::Go);
            w2.step(&cmds, &ctl).unwrap();
            // Now inside the core and committed: no decision point.
            assert!(decision_points(&w2).is_empty());
        }

        // A fresh decision is not due for one second.
        let ctl = ControlContext::unsignalized();
        let mut cmds = std::collections::BTreeMap::new();
        cmds.insert(1u64, RvCommand::Stop);
        w.step(&cmds, &ctl).unwrap();
        assert!(decision_points(&w).is_empty(), "0.5 s after a decision");
        w.step(&std::collections::BTreeMap::new(), &ctl).unwrap();
        assert_eq!(decision_points(&w).len(), 1, "due again after 1.0 s");
    }

    #[test]
    fn hv_leader_produces_no_decision_point() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let mut w = world_on(net, 1);
        let n_in = approach(&w, 0, Direction::North);
        let s_out = departure(&w, 0, Direction::South);
        let len = seg_len(&w, n_in);
        stage_vehicle(&mut w, 1, VehicleClass::Hv, vec![n_in, s_out], 0, len - 10.0, 0.0);
        stage_vehicle(&mut w, 2, VehicleClass::Rv, vec![n_in, s_out], 0, len - 17.5, 0.0);
        assert!(decision_points(&w).is_empty());
    }

    fn env_on(net: Arc<RoadNetwork>, rate: f64, rv: f64, seed: u64) -> (Env, Vec<DecisionPoint>) {
        Env::reset(
            net.clone(),
            DemandConfig::uniform(&net, rate, rv, seed),
            IdmParams::default(),
            RewardConfig::default(),
            1500.0,
            (500.0, 1500.0),
            0,
        )
    }

    #[test]
    fn env_reset_zero_demand_is_empty() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let (env, dps) = env_on(net, 0.0, 0.6, 1);
        assert!(dps.is_empty());
        assert_eq!(env.world().time(), 0.0);
    }

    #[test]
    fn env_step_validates_action_keys() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let (mut env, _) = env_on(net, 0.0, 0.6, 1);
        let mut actions = BTreeMap::new();
        actions.insert(99u64, Action::Go);
        let err = env.step(&actions).unwrap_err();
        assert!(matches!(err, MdpError::ActionKeyMismatch { .. }));
    }

    #[test]
    fn env_single_rv_go_crosses_and_earns_local_wait() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let (mut env, _) = env_on(net, 0.0, 0.6, 1);
        let n_in = approach(env.world(), 0, Direction::North);
        let s_out = departure(env.world(), 0, Direction::South);
        let len = seg_len(env.world(), n_in);
        stage_vehicle(&mut env.world, 1, VehicleClass::Rv, vec![n_in, s_out], 0, len - 10.0, 0.0);
        set_wait(&mut env.world, 1, 3.0);

        let dps = env.decision_points();
        assert_eq!(dps.len(), 1);
        let mut actions = BTreeMap::new();
        actions.insert(1u64, Action::Go);
        let out = env.step(&actions).unwrap();
        assert_eq!(out.outcomes.len(), 1);
        let o = &out.outcomes[0];
        assert_eq!(o.reward.local, 3.0);
        assert_eq!(o.reward.conflict, 0.0);
        // Crosses within a few more intervals.
        for _ in 0..20 {
            if env.world().vehicle(1).is_none() {
                break;
            }
            let acts = env
                .decision_points()
                .into_iter()
                .map(|d| (d.rv, Action::Go))
                .collect();
            env.step(&acts).unwrap();
        }
        assert!(env.world().vehicle(1).is_none(), "RV should have exited");
    }

    #[test]
    fn env_simultaneous_go_yields_one_conflict_each() {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let (mut env, _) = env_on(net, 0.0, 0.6, 1);
        let n_in = approach(env.world(), 0, Direction::North);
        let s_out = departure(env.world(), 0, Direction::South);
        let e_in = approach(env.world(), 0, Direction::East);
        let w_out = departure(env.world(), 0, Direction::West);
        let len = seg_len(env.world(), n_in);
        let line = len - CORE_RADIUS;
        stage_vehicle(&mut env.world, 1, VehicleClass::Rv, vec![n_in, s_out], 0, line, 0.0);
        stage_vehicle(&mut env.world, 2, VehicleClass::Rv, vec![e_in, w_out], 0, line, 0.0);

        let dps = env.decision_points();
        assert_eq!(dps.len(), 2);
        let actions: BTreeMap<VehicleId, Action> =
            dps.iter().map(|d| (d.rv, Action::Go)).collect();
        let out = env.step(&actions).unwrap();
        assert_eq!(out.events.len(), 1, "one event for the pair");
        for o in &out.outcomes {
            assert_eq!(o.reward.conflict, -1.0);
        }
        // The pair is not re-penalized while crossing.
        let out2 = env.step(&BTreeMap::new()).unwrap();
        assert!(out2.events.is_empty());
    }

    #[test]
    fn env_is_deterministic() {
        let run = |seed: u64| {
            let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
            let (mut env, _) = env_on(net, 0.2, 0.6, seed);
            let mut log = Vec::new();
            for _ in 0..120 {
                let acts: BTreeMap<VehicleId, Action> = env
                    .decision_points()
                    .into_iter()
                    .map(|d| (d.rv, Action::Go))
                    .collect();
                let out = env.step(&acts).unwrap();
                for o in &out.outcomes {
                    log.push((o.rv, o.reward.total));
                }
            }
            log
        };
        assert_eq!(run(5), run(5));
    }
}
