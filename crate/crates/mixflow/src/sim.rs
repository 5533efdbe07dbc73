//! The world stepper: orders sub-updates, tracks intersection-core
//! occupancy, detects conflicts, and accumulates metrics.
//!
//! A step advances the world from `t` to `t + DT` with a fixed sub-update
//! order: (1) spawn, (2) resolve per-vehicle motion directives from the
//! frozen pre-step state, (3) advance all vehicles segment-by-segment in
//! ascending segment id, front-to-back within each segment, (4) recompute
//! core occupancy, (5) emit conflict events, (6) sample metrics. Given the
//! same network, config, and seed the whole trajectory is deterministic.

use crate::controllers::{allway_stop_decision, signal_state, ControlContext, ControlMode, StopDecision};
use crate::net::{Direction, IntersectionId, RoadNetwork, SegmentId};
use crate::traffic::{
    advance, in_control_zone, spawn_step, DemandConfig, IdmParams, Leader, MotionDirective,
    PendingAction, RouteTable, VehicleClass, VehicleId, VehicleState, DT, MAX_BRAKE,
    SPAWN_CLEARANCE, VEHICLE_LENGTH, V_STOP,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

/// Radius of the inner conflict region around a node center, m.
pub const CORE_RADIUS: f64 = 10.0;
/// Nominal nose-to-nose spacing of a stopped queue; sets zone capacity.
pub const NOMINAL_SPACING: f64 = VEHICLE_LENGTH + 2.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("command rejected for vehicle {id}: {reason}")]
    InvalidCommand { id: VehicleId, reason: String },
    #[error("intersection {intersection} has no approach from {direction:?}")]
    UnknownApproach {
        intersection: IntersectionId,
        direction: Direction,
    },
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}

/// Stop/go command applied to a robot vehicle at a decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RvCommand {
    Stop,
    Go,
}

/// A movement through an intersection: incoming approach direction to
/// outgoing exit direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Movement {
    pub from: Direction,
    pub to: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnKind {
    Left,
    Straight,
    Right,
}

impl Movement {
    pub fn turn(&self) -> TurnKind {
        if self.to == self.from.opposite() {
            TurnKind::Straight
        } else if self.to == self.from.left_exit() {
            TurnKind::Left
        } else {
            TurnKind::Right
        }
    }
}

/// Whether two movements through the same intersection conflict.
///
/// Rules (right-hand driving, one lane per direction):
/// - movements from the same approach never conflict (FIFO on the lane);
/// - movements into the same exit leg conflict (single-lane merge);
/// - right turns stay in their corner and conflict with nothing else;
/// - opposing straights pass each other; every other straight/left pair
///   crosses, including opposing lefts.
pub fn movements_conflict(a: Movement, b: Movement) -> bool {
    if a.from == b.from {
        return false;
    }
    if a.to == b.to {
        return true;
    }
    let (ta, tb) = (a.turn(), b.turn());
    if ta == TurnKind::Right || tb == TurnKind::Right {
        return false;
    }
    if ta == TurnKind::Straight && tb == TurnKind::Straight && b.from == a.from.opposite() {
        return false;
    }
    true
}

/// Exhaustive symmetric conflict table over the movements of one
/// intersection leg set.
#[derive(Debug, Clone)]
pub struct ConflictMatrix {
    movements: Vec<Movement>,
    table: BTreeMap<(Movement, Movement), bool>,
}

impl ConflictMatrix {
    pub fn for_legs(legs: &[Direction]) -> Self {
        let mut movements = Vec::new();
        for &from in legs {
            for &to in legs {
                if from != to {
                    movements.push(Movement { from, to });
                }
            }
        }
        let mut table = BTreeMap::new();
        for &a in &movements {
            for &b in &movements {
                table.insert((a, b), movements_conflict(a, b));
            }
        }
        ConflictMatrix { movements, table }
    }

    pub fn movements(&self) -> &[Movement] {
        &self.movements
    }

    pub fn conflicts(&self, a: Movement, b: Movement) -> bool {
        *self.table.get(&(a, b)).unwrap_or(&false)
    }
}

/// A vehicle inside an intersection core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreEntry {
    pub vehicle: VehicleId,
    pub movement: Movement,
    pub entered_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictEvent {
    pub time: f64,
    pub intersection: IntersectionId,
    pub first: (VehicleId, Movement),
    pub second: (VehicleId, Movement),
}

impl ConflictEvent {
    pub fn involves(&self, id: VehicleId) -> bool {
        self.first.0 == id || self.second.0 == id
    }
}

/// One event per unordered conflicting pair per co-presence: an event fires
/// the step the second vehicle enters and the pair does not re-fire while
/// both remain in the core. `flagged` carries that cross-step state.
pub fn detect_conflicts(
    intersection: IntersectionId,
    occ: &[CoreEntry],
    cm: &ConflictMatrix,
    flagged: &mut BTreeSet<(VehicleId, VehicleId)>,
    time: f64,
) -> Vec<ConflictEvent> {
    let mut events = Vec::new();
    for i in 0..occ.len() {
        for j in (i + 1)..occ.len() {
            let (a, b) = (&occ[i], &occ[j]);
            if !cm.conflicts(a.movement, b.movement) {
                continue;
            }
            let key = (a.vehicle.min(b.vehicle), a.vehicle.max(b.vehicle));
            if flagged.insert(key) {
                events.push(ConflictEvent {
                    time,
                    intersection,
                    first: (a.vehicle, a.movement),
                    second: (b.vehicle, b.movement),
                });
            }
        }
    }
    events
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Per-approach sample at one instant.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ApproachSample {
    pub queue: u32,
    pub avg_wait: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct IntersectionSample {
    /// Keyed by canonical direction index present at the intersection.
    pub approaches: BTreeMap<String, ApproachSample>,
    /// RV share among vehicles in this intersection's zones; absent when empty.
    pub rv_share: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeriesSample {
    pub t: f64,
    pub intersections: BTreeMap<IntersectionId, IntersectionSample>,
}

/// Windowed accumulator for the waiting-time metric and report series.
/// Averages use only samples with `t` in `[window.0, window.1)`; wait gained
/// during a step is attributed to the step's end time.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    window: (f64, f64),
    wait_by_vehicle: BTreeMap<VehicleId, f64>,
    present_vehicles: BTreeSet<VehicleId>,
    wait_by_intersection: BTreeMap<IntersectionId, f64>,
    present_by_intersection: BTreeMap<IntersectionId, BTreeSet<VehicleId>>,
    conflict_total: u64,
    conflict_in_window: u64,
    series: Vec<SeriesSample>,
}

impl MetricsAccumulator {
    pub fn new(window: (f64, f64)) -> Self {
        MetricsAccumulator {
            window,
            wait_by_vehicle: BTreeMap::new(),
            present_vehicles: BTreeSet::new(),
            wait_by_intersection: BTreeMap::new(),
            present_by_intersection: BTreeMap::new(),
            conflict_total: 0,
            conflict_in_window: 0,
            series: Vec::new(),
        }
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    fn in_window(&self, t: f64) -> bool {
        t >= self.window.0 && t < self.window.1
    }

    fn add_wait(&mut self, id: VehicleId, at: IntersectionId, t: f64, delta: f64) {
        if !self.in_window(t) {
            return;
        }
        *self.wait_by_vehicle.entry(id).or_insert(0.0) += delta;
        *self.wait_by_intersection.entry(at).or_insert(0.0) += delta;
    }

    fn mark_present(&mut self, id: VehicleId, at: IntersectionId, t: f64) {
        if !self.in_window(t) {
            return;
        }
        self.present_vehicles.insert(id);
        self.present_by_intersection.entry(at).or_default().insert(id);
    }

    fn count_conflicts(&mut self, n: u64, t: f64) {
        self.conflict_total += n;
        if self.in_window(t) {
            self.conflict_in_window += n;
        }
    }

    /// Average waiting time over the window: total wait gained in window
    /// divided by the number of distinct vehicles present in any control
    /// zone during the window. Zero when no vehicle touched a zone.
    pub fn average_wait(&self) -> f64 {
        if self.present_vehicles.is_empty() {
            return 0.0;
        }
        let total: f64 = self.wait_by_vehicle.values().sum();
        total / self.present_vehicles.len() as f64
    }

    pub fn average_wait_by_intersection(&self) -> BTreeMap<IntersectionId, f64> {
        let mut out = BTreeMap::new();
        for (&id, present) in &self.present_by_intersection {
            if present.is_empty() {
                continue;
            }
            let total = self.wait_by_intersection.get(&id).copied().unwrap_or(0.0);
            out.insert(id, total / present.len() as f64);
        }
        out
    }

    pub fn vehicles_counted(&self) -> usize {
        self.present_vehicles.len()
    }

    pub fn conflicts(&self) -> (u64, u64) {
        (self.conflict_total, self.conflict_in_window)
    }

    pub fn series(&self) -> &[SeriesSample] {
        &self.series
    }
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub vehicle: VehicleId,
    pub segment: SegmentId,
    pub pos: f64,
    pub speed: f64,
    pub class: VehicleClass,
}

pub struct WorldState {
    net: Arc<RoadNetwork>,
    routes: RouteTable,
    idm: IdmParams,
    demand: DemandConfig,
    vehicles: BTreeMap<VehicleId, VehicleState>,
    time: f64,
    step_count: u64,
    core_occupancy: BTreeMap<IntersectionId, Vec<CoreEntry>>,
    conflict_matrices: BTreeMap<IntersectionId, ConflictMatrix>,
    flagged_pairs: BTreeSet<(VehicleId, VehicleId)>,
    /// Core entries remembered briefly after exit for the headway rule.
    recent_entries: BTreeMap<IntersectionId, Vec<(Movement, f64)>>,
    rng: rand_chacha::ChaCha8Rng,
    next_vehicle_id: VehicleId,
    spawned_total: u64,
    exited_total: u64,
    overlap_clamps: u64,
    metrics: MetricsAccumulator,
}

impl WorldState {
    /// Build an empty world. `episode_seed` separates otherwise identical
    /// configurations (evaluation runs, training episodes).
    pub fn new(
        net: Arc<RoadNetwork>,
        demand: DemandConfig,
        idm: IdmParams,
        window: (f64, f64),
        episode_seed: u64,
    ) -> Self {
        let routes = RouteTable::build(&net);
        let conflict_matrices = net
            .intersections()
            .filter(|i| !i.is_boundary())
            .map(|i| (i.id, ConflictMatrix::for_legs(&i.legs())))
            .collect();
        let rng = crate::seeding::rng_for(demand.seed, crate::seeding::Stream::World, episode_seed);
        WorldState {
            net,
            routes,
            idm,
            demand,
            vehicles: BTreeMap::new(),
            time: 0.0,
            step_count: 0,
            core_occupancy: BTreeMap::new(),
            conflict_matrices,
            flagged_pairs: BTreeSet::new(),
            recent_entries: BTreeMap::new(),
            rng,
            next_vehicle_id: 0,
            spawned_total: 0,
            exited_total: 0,
            overlap_clamps: 0,
            metrics: MetricsAccumulator::new(window),
        }
    }

    pub fn net(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn idm(&self) -> &IdmParams {
        &self.idm
    }

    pub fn demand(&self) -> &DemandConfig {
        &self.demand
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.values()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.get(&id)
    }

    pub fn active_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn spawned_total(&self) -> u64 {
        self.spawned_total
    }

    pub fn exited_total(&self) -> u64 {
        self.exited_total
    }

    pub fn overlap_clamps(&self) -> u64 {
        self.overlap_clamps
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    pub fn conflict_matrix(&self, intersection: IntersectionId) -> Option<&ConflictMatrix> {
        self.conflict_matrices.get(&intersection)
    }

    pub fn core_entries(&self, intersection: IntersectionId) -> &[CoreEntry] {
        self.core_occupancy
            .get(&intersection)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn recent_core_entries(&self, intersection: IntersectionId) -> &[(Movement, f64)] {
        self.recent_entries
            .get(&intersection)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Stop line position on an approach segment: the core boundary.
    pub fn stop_line(&self, segment: SegmentId) -> f64 {
        let seg = self.net.segment(segment).expect("segment exists");
        seg.length - CORE_RADIUS
    }

    /// The movement a vehicle makes through the head intersection of its
    /// current segment, if the head is internal and the route continues.
    pub fn movement_ahead(&self, v: &VehicleState) -> Option<Movement> {
        let seg = self.net.segment(v.current_segment()).ok()?;
        let head = self.net.intersection(seg.to).ok()?;
        if head.is_boundary() {
            return None;
        }
        let from = head
            .approaches()
            .iter()
            .find(|(_, s)| *s == seg.id)
            .map(|(d, _)| *d)?;
        let next = v.next_segment()?;
        let to = head
            .departures()
            .iter()
            .find(|(_, s)| *s == next)
            .map(|(d, _)| *d)?;
        Some(Movement { from, to })
    }

    /// Vehicles on the approach from `direction`, inside the control zone
    /// and not past the stop line, ordered front (closest to line) first.
    pub fn approach_queue_band(
        &self,
        intersection: IntersectionId,
        direction: Direction,
    ) -> Result<Vec<VehicleId>, SimError> {
        let node = self.net.intersection(intersection)?;
        let seg_id = node
            .approach_from(direction)
            .ok_or(SimError::UnknownApproach {
                intersection,
                direction,
            })?;
        let seg = self.net.segment(seg_id)?;
        let zone_start = seg.length - node.control_zone_radius;
        let line = seg.length - CORE_RADIUS;
        let mut band: Vec<(f64, VehicleId)> = self
            .vehicles
            .values()
            .filter(|v| v.current_segment() == seg_id)
            .filter(|v| v.longitudinal_pos >= zone_start && v.longitudinal_pos <= line)
            .map(|v| (v.longitudinal_pos, v.id))
            .collect();
        band.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(band.into_iter().map(|(_, id)| id).collect())
    }

    /// Front vehicle of the approach queue, if any.
    pub fn queue_leader(
        &self,
        intersection: IntersectionId,
        direction: Direction,
    ) -> Result<Option<VehicleId>, SimError> {
        Ok(self.approach_queue_band(intersection, direction)?.first().copied())
    }

    /// Number of stationary vehicles on the approach inside the control zone.
    pub fn queue_length(
        &self,
        intersection: IntersectionId,
        direction: Direction,
    ) -> Result<usize, SimError> {
        let node = self.net.intersection(intersection)?;
        let seg_id = node
            .approach_from(direction)
            .ok_or(SimError::UnknownApproach {
                intersection,
                direction,
            })?;
        let seg = self.net.segment(seg_id)?;
        let zone_start = seg.length - node.control_zone_radius;
        Ok(self
            .vehicles
            .values()
            .filter(|v| v.current_segment() == seg_id)
            .filter(|v| v.longitudinal_pos >= zone_start && v.speed < V_STOP)
            .count())
    }

    /// Mean accumulated wait of vehicles currently in the approach zone;
    /// zero when the zone is empty.
    pub fn avg_wait(
        &self,
        intersection: IntersectionId,
        direction: Direction,
    ) -> Result<f64, SimError> {
        let node = self.net.intersection(intersection)?;
        let seg_id = node
            .approach_from(direction)
            .ok_or(SimError::UnknownApproach {
                intersection,
                direction,
            })?;
        let seg = self.net.segment(seg_id)?;
        let zone_start = seg.length - node.control_zone_radius;
        let waits: Vec<f64> = self
            .vehicles
            .values()
            .filter(|v| v.current_segment() == seg_id && v.longitudinal_pos >= zone_start)
            .map(|v| v.accumulated_wait)
            .collect();
        if waits.is_empty() {
            Ok(0.0)
        } else {
            Ok(waits.iter().sum::<f64>() / waits.len() as f64)
        }
    }

    /// All vehicles currently in any control zone of `intersection`.
    pub fn vehicles_in_zones(&self, intersection: IntersectionId) -> Vec<&VehicleState> {
        let node = match self.net.intersection(intersection) {
            Ok(n) if !n.is_boundary() => n,
            _ => return Vec::new(),
        };
        let approach_segs: BTreeSet<SegmentId> =
            node.approaches().iter().map(|(_, s)| *s).collect();
        self.vehicles
            .values()
            .filter(|v| {
                approach_segs.contains(&v.current_segment()) && {
                    let seg = self.net.segment(v.current_segment()).expect("exists");
                    seg.length - v.longitudinal_pos <= node.control_zone_radius
                }
            })
            .collect()
    }

    pub fn trace_records(&self) -> Vec<TraceRecord> {
        self.vehicles
            .values()
            .map(|v| TraceRecord {
                t: self.time,
                vehicle: v.id,
                segment: v.current_segment(),
                pos: v.longitudinal_pos,
                speed: v.speed,
                class: v.class,
            })
            .collect()
    }

    /// Vehicle conservation: all spawned vehicles are active or exited.
    pub fn conservation_holds(&self) -> bool {
        self.spawned_total == self.vehicles.len() as u64 + self.exited_total
    }

    /// Minimum nose-to-tail gap between consecutive vehicles sharing a
    /// segment; `None` when no segment has two vehicles.
    pub fn min_same_segment_gap(&self) -> Option<f64> {
        let mut per_seg: BTreeMap<SegmentId, Vec<f64>> = BTreeMap::new();
        for v in self.vehicles.values() {
            per_seg.entry(v.current_segment()).or_default().push(v.longitudinal_pos);
        }
        let mut min_gap: Option<f64> = None;
        for positions in per_seg.values_mut() {
            positions.sort_by(|a, b| a.total_cmp(b));
            for w in positions.windows(2) {
                let gap = w[1] - w[0] - VEHICLE_LENGTH;
                min_gap = Some(min_gap.map_or(gap, |g: f64| g.min(gap)));
            }
        }
        min_gap
    }

    fn recompute_core_occupancy(&mut self) {
        let prev = std::mem::take(&mut self.core_occupancy);
        let mut next: BTreeMap<IntersectionId, Vec<CoreEntry>> = BTreeMap::new();
        for v in self.vehicles.values() {
            let seg = self.net.segment(v.current_segment()).expect("exists");
            // Incoming side: within the core of the head, movement ahead.
            let head = self.net.intersection(seg.to).expect("exists");
            if !head.is_boundary() && (seg.length - v.longitudinal_pos) < CORE_RADIUS {
                if let Some(movement) = self.movement_ahead(v) {
                    let entered_at = prev
                        .get(&head.id)
                        .and_then(|es| es.iter().find(|e| e.vehicle == v.id))
                        .map(|e| e.entered_at)
                        .unwrap_or(self.time);
                    next.entry(head.id).or_default().push(CoreEntry {
                        vehicle: v.id,
                        movement,
                        entered_at,
                    });
                    continue;
                }
            }
            // Outgoing side: just crossed, still within the core of the tail.
            let tail = self.net.intersection(seg.from).expect("exists");
            if !tail.is_boundary() && v.longitudinal_pos < CORE_RADIUS {
                if let Some(prev_seg) = v.previous_segment() {
                    let from = tail
                        .approaches()
                        .iter()
                        .find(|(_, s)| *s == prev_seg)
                        .map(|(d, _)| *d);
                    let to = tail
                        .departures()
                        .iter()
                        .find(|(_, s)| *s == seg.id)
                        .map(|(d, _)| *d);
                    if let (Some(from), Some(to)) = (from, to) {
                        let entered_at = prev
                            .get(&tail.id)
                            .and_then(|es| es.iter().find(|e| e.vehicle == v.id))
                            .map(|e| e.entered_at)
                            .unwrap_or(self.time);
                        next.entry(tail.id).or_default().push(CoreEntry {
                            vehicle: v.id,
                            movement: Movement { from, to },
                            entered_at,
                        });
                    }
                }
            }
        }

        // Drop flags for pairs no longer co-present in a core.
        let in_core: BTreeSet<VehicleId> = next
            .values()
            .flat_map(|es| es.iter().map(|e| e.vehicle))
            .collect();
        self.flagged_pairs
            .retain(|(a, b)| in_core.contains(a) && in_core.contains(b));

        // Remember fresh entries for the headway rule, pruning old ones.
        for (id, entries) in &next {
            let known = self.recent_entries.entry(*id).or_default();
            for e in entries {
                if e.entered_at == self.time {
                    known.push((e.movement, e.entered_at));
                }
            }
        }
        let horizon = self.time - 30.0;
        for known in self.recent_entries.values_mut() {
            known.retain(|(_, t)| *t >= horizon);
        }

        self.core_occupancy = next;
        // Go-commitment: an RV that crossed the stop line finishes the
        // crossing no matter what later commands say.
        for entries in self.core_occupancy.values() {
            for e in entries {
                if let Some(v) = self.vehicles.get_mut(&e.vehicle) {
                    if v.is_rv() {
                        v.committed = true;
                    }
                }
            }
        }
    }

    fn resolve_directive(
        &self,
        v: &VehicleState,
        ctl: &ControlContext,
        seg_order: &BTreeMap<SegmentId, Vec<VehicleId>>,
    ) -> MotionDirective {
        let seg = self.net.segment(v.current_segment()).expect("exists");
        let head = self.net.intersection(seg.to).expect("exists");

        // Same-segment leader, else first vehicle on the next route segment.
        let order = seg_order.get(&seg.id).map(Vec::as_slice).unwrap_or(&[]);
        let my_rank = order.iter().position(|&id| id == v.id).expect("in order");
        let leader = if my_rank > 0 {
            let lead = &self.vehicles[&order[my_rank - 1]];
            Some(Leader {
                speed: lead.speed,
                gap: lead.longitudinal_pos - VEHICLE_LENGTH - v.longitudinal_pos,
            })
        } else {
            v.next_segment().and_then(|next| {
                seg_order
                    .get(&next)
                    .and_then(|ids| ids.last())
                    .map(|&id| &self.vehicles[&id])
                    .map(|lead| Leader {
                        speed: lead.speed,
                        gap: (seg.length - v.longitudinal_pos) + lead.longitudinal_pos
                            - VEHICLE_LENGTH,
                    })
            })
        };

        if head.is_boundary() {
            return match leader {
                Some(l) => MotionDirective::FollowIdm { leader: Some(l) },
                None => MotionDirective::Proceed,
            };
        }

        let line = seg.length - CORE_RADIUS;
        let in_zone = (seg.length - v.longitudinal_pos) <= head.control_zone_radius;
        let past_line = v.longitudinal_pos > line;

        if past_line {
            // Crossing the core; never stop inside it.
            return match leader {
                Some(l) => MotionDirective::FollowIdm { leader: Some(l) },
                None => MotionDirective::Proceed,
            };
        }

        let must_stop = if !in_zone {
            false
        } else {
            match v.class {
                VehicleClass::Rv => {
                    v.pending_action != PendingAction::Go && !v.committed
                }
                VehicleClass::Hv => match ctl.mode {
                    ControlMode::Signalized => {
                        let plan = ctl.plans.get(&head.id);
                        match plan {
                            Some(plan) => {
                                let greens = signal_state(plan, self.time);
                                let my_dir = head
                                    .approaches()
                                    .iter()
                                    .find(|(_, s)| *s == seg.id)
                                    .map(|(d, _)| *d)
                                    .expect("approach dir");
                                !greens.contains(&my_dir)
                            }
                            None => false,
                        }
                    }
                    ControlMode::Unsignalized => {
                        // Only the queue leader consults the stop rule; the
                        // rest queue behind it through car following.
                        let my_dir = head
                            .approaches()
                            .iter()
                            .find(|(_, s)| *s == seg.id)
                            .map(|(d, _)| *d)
                            .expect("approach dir");
                        let is_leader = self
                            .queue_leader(head.id, my_dir)
                            .ok()
                            .flatten()
                            .map(|id| id == v.id)
                            .unwrap_or(false);
                        if is_leader {
                            allway_stop_decision(self, v.id, &ctl.gap) == StopDecision::Hold
                        } else {
                            // Followers hold unless the vehicle directly
                            // ahead has left the band (then they become
                            // leaders next step).
                            leader.is_some()
                                && self.vehicles[&order[my_rank - 1]].longitudinal_pos <= line
                        }
                    }
                },
            }
        };

        if must_stop {
            // Queue behind a leader that is still before the line, otherwise
            // aim for the line itself.
            if let Some(l) = leader {
                let lead_pos = v.longitudinal_pos + l.gap + VEHICLE_LENGTH;
                if lead_pos <= line + 0.01 {
                    return MotionDirective::FollowIdm { leader: Some(l) };
                }
            }
            MotionDirective::HoldAt { stop_pos: line }
        } else {
            match leader {
                Some(l) => MotionDirective::FollowIdm { leader: Some(l) },
                None => MotionDirective::Proceed,
            }
        }
    }

    /// Advance the world by one dynamics step.
    pub fn step(
        &mut self,
        rv_commands: &BTreeMap<VehicleId, RvCommand>,
        ctl: &ControlContext,
    ) -> Result<Vec<ConflictEvent>, SimError> {
        // Validate and apply commands.
        for (&id, &cmd) in rv_commands {
            let v = self.vehicles.get(&id).ok_or(SimError::InvalidCommand {
                id,
                reason: "no such vehicle".into(),
            })?;
            if !v.is_rv() {
                return Err(SimError::InvalidCommand {
                    id,
                    reason: "not a robot vehicle".into(),
                });
            }
            let _ = cmd;
        }
        let now = self.time;
        for (&id, &cmd) in rv_commands {
            let v = self.vehicles.get_mut(&id).expect("validated");
            v.pending_action = match cmd {
                RvCommand::Stop => PendingAction::Stop,
                RvCommand::Go => PendingAction::Go,
            };
            v.last_decision = Some(now);
        }

        // (1) Spawn.
        let blocked: BTreeSet<IntersectionId> = self
            .net
            .entries()
            .iter()
            .copied()
            .filter(|&e| {
                let seg = self.net.entry_segment(e).expect("entry has departure");
                self.vehicles
                    .values()
                    .any(|v| v.current_segment() == seg && v.longitudinal_pos < SPAWN_CLEARANCE)
            })
            .collect();
        let spawned = spawn_step(
            &self.demand,
            &self.net,
            &self.routes,
            &mut self.rng,
            DT,
            |e| blocked.contains(&e),
            &mut self.next_vehicle_id,
        );
        self.spawned_total += spawned.len() as u64;
        for mut v in spawned {
            // Match speed to any queue already near the entry.
            let seg = self.net.segment(v.current_segment()).expect("exists");
            let tail_ahead = self
                .vehicles
                .values()
                .filter(|o| o.current_segment() == seg.id)
                .map(|o| (o.longitudinal_pos, o.speed))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((pos, speed)) = tail_ahead {
                let gap = pos - VEHICLE_LENGTH;
                let safe = speed
                    + (2.0 * self.idm.comfortable_decel * (gap - self.idm.min_gap).max(0.0))
                        .sqrt();
                v.speed = v.speed.min(safe.max(0.0));
            }
            self.vehicles.insert(v.id, v);
        }

        // (2) Resolve directives from the frozen state.
        let mut seg_order: BTreeMap<SegmentId, Vec<VehicleId>> = BTreeMap::new();
        for v in self.vehicles.values() {
            seg_order.entry(v.current_segment()).or_default().push(v.id);
        }
        for (seg, ids) in seg_order.iter_mut() {
            let seg = *seg;
            ids.sort_by(|&a, &b| {
                let (va, vb) = (&self.vehicles[&a], &self.vehicles[&b]);
                debug_assert_eq!(va.current_segment(), seg);
                vb.longitudinal_pos
                    .total_cmp(&va.longitudinal_pos)
                    .then(a.cmp(&b))
            });
        }
        let mut directives: BTreeMap<VehicleId, MotionDirective> = BTreeMap::new();
        for v in self.vehicles.values() {
            directives.insert(v.id, self.resolve_directive(v, ctl, &seg_order));
        }

        // (3) Advance, ascending segment id, front-to-back, with a hard
        // no-overlap cap against the already-advanced predecessor.
        let t_end = now + DT;
        let mut exited: Vec<VehicleId> = Vec::new();
        let mut wait_deltas: Vec<(VehicleId, IntersectionId, f64)> = Vec::new();
        for (&seg_id, ids) in &seg_order {
            let seg_len = self.net.segment(seg_id).expect("exists").length;
            for (rank, &id) in ids.iter().enumerate() {
                let mut v = self.vehicles.remove(&id).expect("present");
                let wait_before = v.accumulated_wait;
                let directive = directives[&id];

                // Absolute cap from the predecessor on this segment (already
                // advanced), or from the last vehicle on the next segment.
                let cap = if rank > 0 {
                    let lead_id = ids[rank - 1];
                    if exited.contains(&lead_id) {
                        None
                    } else {
                        let lead = &self.vehicles[&lead_id];
                        if lead.current_segment() == seg_id {
                            Some(lead.longitudinal_pos - VEHICLE_LENGTH)
                        } else if Some(lead.current_segment()) == v.next_segment() {
                            Some(seg_len + lead.longitudinal_pos - VEHICLE_LENGTH)
                        } else {
                            None
                        }
                    }
                } else {
                    v.next_segment().and_then(|next| {
                        self.vehicles
                            .values()
                            .filter(|o| o.current_segment() == next)
                            .map(|o| o.longitudinal_pos)
                            .min_by(|a, b| a.total_cmp(b))
                            .map(|pos| seg_len + pos - VEHICLE_LENGTH)
                    })
                };

                let before_pos = v.longitudinal_pos;
                let outcome = advance(&mut v, &self.net, &directive, &self.idm, DT, now);

                if !outcome.exited {
                    if let Some(cap) = cap {
                        // Express the new position in old-segment coordinates.
                        let abs = if v.current_segment() == seg_id {
                            v.longitudinal_pos
                        } else {
                            seg_len + v.longitudinal_pos
                        };
                        if abs > cap {
                            self.overlap_clamps += 1;
                            let capped = cap.max(before_pos);
                            if capped <= seg_len {
                                // Undo any transition.
                                while v.current_segment() != seg_id {
                                    v.segment_index -= 1;
                                }
                                v.longitudinal_pos = capped;
                            } else {
                                v.longitudinal_pos = capped - seg_len;
                            }
                            v.speed = 0.0;
                        }
                    }
                }

                if outcome.exited {
                    exited.push(id);
                    self.exited_total += 1;
                    let delta = v.accumulated_wait - wait_before;
                    if delta > 0.0 {
                        let at = self.net.segment(seg_id).expect("exists").to;
                        wait_deltas.push((id, at, delta));
                    }
                    continue;
                }

                let delta = v.accumulated_wait - wait_before;
                if delta > 0.0 {
                    let at = self.net.segment(v.current_segment()).expect("exists").to;
                    wait_deltas.push((id, at, delta));
                }

                // Stop-line arrival bookkeeping for the all-way-stop FIFO.
                if v.speed == 0.0 && v.stopline_arrival.is_none() {
                    let seg = self.net.segment(v.current_segment()).expect("exists");
                    let line = seg.length - CORE_RADIUS;
                    if (line - v.longitudinal_pos).abs() < 0.5
                        && !self.net.intersection(seg.to).expect("exists").is_boundary()
                    {
                        v.stopline_arrival = Some(t_end);
                    }
                }

                self.vehicles.insert(id, v);
            }
        }

        // (4) Core occupancy.
        self.time = t_end;
        self.step_count += 1;
        self.recompute_core_occupancy();

        // (5) Conflict events.
        let mut events = Vec::new();
        for (&id, entries) in &self.core_occupancy {
            let cm = &self.conflict_matrices[&id];
            events.extend(detect_conflicts(
                id,
                entries,
                cm,
                &mut self.flagged_pairs,
                self.time,
            ));
        }
        self.metrics.count_conflicts(events.len() as u64, self.time);

        // (6) Metrics.
        for (id, at, delta) in wait_deltas {
            self.metrics.add_wait(id, at, self.time, delta);
        }
        let present: Vec<(VehicleId, IntersectionId)> = self
            .vehicles
            .values()
            .filter_map(|v| {
                let seg = self.net.segment(v.current_segment()).expect("exists");
                if in_control_zone(&self.net, seg.id, v.longitudinal_pos) {
                    Some((v.id, seg.to))
                } else {
                    None
                }
            })
            .collect();
        for (id, at) in present {
            self.metrics.mark_present(id, at, self.time);
        }
        if self.step_count % 2 == 0 {
            self.sample_series();
        }

        debug_assert!(self.conservation_holds());
        Ok(events)
    }

    fn sample_series(&mut self) {
        let mut intersections = BTreeMap::new();
        for node in self.net.intersections().filter(|i| !i.is_boundary()) {
            let mut approaches = BTreeMap::new();
            for (dir, _) in node.approaches() {
                let queue = self.queue_length(node.id, *dir).expect("valid approach") as u32;
                let avg_wait = self.avg_wait(node.id, *dir).expect("valid approach");
                approaches.insert(format!("{dir:?}"), ApproachSample { queue, avg_wait });
            }
            let in_zones = self.vehicles_in_zones(node.id);
            let rv_share = if in_zones.is_empty() {
                None
            } else {
                let rvs = in_zones.iter().filter(|v| v.is_rv()).count();
                Some(rvs as f64 / in_zones.len() as f64)
            };
            intersections.insert(node.id, IntersectionSample { approaches, rv_share });
        }
        self.metrics.series.push(SeriesSample {
            t: self.time,
            intersections,
        });
    }

    /// Fraction of RVs among vehicles in the control zones of
    /// `intersection`; the neutral `fallback` when no vehicle is there.
    pub fn rv_share_in_zones(&self, intersection: IntersectionId, fallback: f64) -> f64 {
        let in_zones = self.vehicles_in_zones(intersection);
        if in_zones.is_empty() {
            return fallback;
        }
        let rvs = in_zones.iter().filter(|v| v.is_rv()).count();
        rvs as f64 / in_zones.len() as f64
    }
}

// Keep MAX_BRAKE referenced; it is part of the public dynamics contract.
const _: f64 = MAX_BRAKE;

/// Test-only staging helpers shared across module tests.
#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Place a vehicle on a specific route at a position, for staging.
    pub(crate) fn stage_vehicle(
        w: &mut WorldState,
        id: VehicleId,
        class: VehicleClass,
        route: Vec<SegmentId>,
        segment_index: usize,
        pos: f64,
        speed: f64,
    ) {
        let v = VehicleState {
            id,
            class,
            route,
            segment_index,
            longitudinal_pos: pos,
            speed,
            stationary_since: None,
            accumulated_wait: 0.0,
            pending_action: PendingAction::None,
            stopline_arrival: None,
            last_decision: None,
            committed: false,
        };
        w.vehicles.insert(id, v);
        w.spawned_total += 1;
        w.next_vehicle_id = w.next_vehicle_id.max(id + 1);
    }

    pub(crate) fn set_wait(w: &mut WorldState, id: VehicleId, wait: f64) {
        w.vehicles.get_mut(&id).unwrap().accumulated_wait = wait;
    }

    pub(crate) fn route_through(
        w: &WorldState,
        entry: crate::net::IntersectionId,
        exit: crate::net::IntersectionId,
    ) -> Vec<SegmentId> {
        w.net().shortest_path(entry, exit).expect("route exists")
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::{route_through, set_wait, stage_vehicle};
    use super::*;
    use crate::controllers::ControlContext;
    use crate::net::generate_grid;
    use crate::traffic::VehicleClass;
    use approx::assert_abs_diff_eq;

    fn world(rate: f64, rv: f64, seed: u64) -> WorldState {
        let net = Arc::new(generate_grid(1, 1, 200.0).unwrap());
        let demand = DemandConfig::uniform(&net, rate, rv, seed);
        WorldState::new(net, demand, IdmParams::default(), (0.0, f64::INFINITY), 0)
    }

    #[test]
    fn empty_world_advances_time_only() {
        let mut w = world(0.0, 0.6, 1);
        let ctl = ControlContext::unsignalized();
        for _ in 0..10 {
            let events = w.step(&BTreeMap::new(), &ctl).unwrap();
            assert!(events.is_empty());
        }
        assert_abs_diff_eq!(w.time(), 5.0);
        assert_eq!(w.active_count(), 0);
        assert!(w.conservation_holds());
    }

    #[test]
    fn command_for_missing_vehicle_rejected() {
        let mut w = world(0.0, 0.6, 1);
        let ctl = ControlContext::unsignalized();
        let mut cmds = BTreeMap::new();
        cmds.insert(7u64, RvCommand::Go);
        let err = w.step(&cmds, &ctl).unwrap_err();
        assert!(matches!(err, SimError::InvalidCommand { id: 7, .. }));
    }

    #[test]
    fn command_for_hv_rejected() {
        let mut w = world(0.0, 0.0, 1);
        let entry = w.net().entries()[0];
        let exit = w.net().exits()[2];
        let route = route_through(&w, entry, exit);
        stage_vehicle(&mut w, 0, VehicleClass::Hv, route, 0, 0.0, 0.0);
        let ctl = ControlContext::unsignalized();
        let mut cmds = BTreeMap::new();
        cmds.insert(0u64, RvCommand::Go);
        let err = w.step(&cmds, &ctl).unwrap_err();
        assert!(matches!(err, SimError::InvalidCommand { id: 0, .. }));
    }

    #[test]
    fn held_rv_accumulates_wait() {
        // One RV held at the stop line for 10 steps of 0.5 s waits 5.0 s.
        let mut w = world(0.0, 0.6, 1);
        let entry = w.net().entries()[0];
        let exit = w.net().exits()[2];
        let route = route_through(&w, entry, exit);
        let first = route[0];
        let line = w.stop_line(first);
        stage_vehicle(&mut w, 0, VehicleClass::Rv, route, 0, line, 0.0);
        let ctl = ControlContext::unsignalized();
        for _ in 0..10 {
            w.step(&BTreeMap::new(), &ctl).unwrap();
        }
        let v = w.vehicle(0).unwrap();
        assert_eq!(v.longitudinal_pos, line);
        assert_abs_diff_eq!(v.accumulated_wait, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn crossing_movements_emit_one_event() {
        // Two vehicles entering the four-way core simultaneously on
        // crossing through movements: by the conflict table the
        // (N->S, E->W) pair conflicts, so exactly one event fires naming
        // both, and it does not re-fire while both stay in the core.
        let mut w = world(0.0, 0.6, 1);
        let net = w.net();
        let center = net.intersection(0).unwrap();
        let n_in = center.approach_from(Direction::North).unwrap();
        let s_out = center.departure_toward(Direction::South).unwrap();
        let e_in = center.approach_from(Direction::East).unwrap();
        let w_out = center.departure_toward(Direction::West).unwrap();
        let len = net.segment(n_in).unwrap().length;

        stage_vehicle(&mut w, 1, VehicleClass::Rv, vec![n_in, s_out], 0, len - 12.0, 10.0);
        stage_vehicle(&mut w, 2, VehicleClass::Rv, vec![e_in, w_out], 0, len - 12.0, 10.0);
        let mut cmds = BTreeMap::new();
        cmds.insert(1u64, RvCommand::Go);
        cmds.insert(2u64, RvCommand::Go);
        let ctl = ControlContext::unsignalized();
        let events = w.step(&cmds, &ctl).unwrap();
        assert_eq!(events.len(), 1);
        let e = &events[0];
        assert!(e.involves(1) && e.involves(2));
        assert_eq!(e.intersection, 0);
        // Both still in the core next step; no re-fire.
        let events = w.step(&BTreeMap::new(), &ctl).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn same_approach_vehicles_do_not_conflict() {
        let legs = Direction::ALL;
        let cm = ConflictMatrix::for_legs(&legs);
        let a = Movement { from: Direction::North, to: Direction::South };
        let b = Movement { from: Direction::North, to: Direction::East };
        assert!(!cm.conflicts(a, b));

        let mut flagged = BTreeSet::new();
        let occ = vec![
            CoreEntry { vehicle: 1, movement: a, entered_at: 0.0 },
            CoreEntry { vehicle: 2, movement: a, entered_at: 0.0 },
        ];
        assert!(detect_conflicts(0, &occ, &cm, &mut flagged, 0.0).is_empty());
    }

    #[test]
    fn single_vehicle_no_events() {
        let cm = ConflictMatrix::for_legs(&Direction::ALL);
        let mut flagged = BTreeSet::new();
        let occ = vec![CoreEntry {
            vehicle: 1,
            movement: Movement { from: Direction::North, to: Direction::South },
            entered_at: 0.0,
        }];
        assert!(detect_conflicts(0, &occ, &cm, &mut flagged, 0.0).is_empty());
    }

    #[test]
    fn conflict_table_hand_checked_rows() {
        let cm = ConflictMatrix::for_legs(&Direction::ALL);
        let m = |f, t| Movement { from: f, to: t };
        use Direction::*;
        // Crossing throughs conflict.
        assert!(cm.conflicts(m(North, South), m(East, West)));
        // Opposing throughs pass.
        assert!(!cm.conflicts(m(North, South), m(South, North)));
        // Opposing lefts conflict.
        assert!(cm.conflicts(m(North, East), m(South, West)));
        // Left vs opposing through conflicts.
        assert!(cm.conflicts(m(South, West), m(North, South)));
        // Right turns stay clear (distinct exits).
        assert!(!cm.conflicts(m(North, West), m(South, East)));
        // Merging into the same leg conflicts.
        assert!(cm.conflicts(m(East, South), m(North, South)));
    }

    #[test]
    fn conflict_table_is_symmetric_and_exhaustive() {
        for legs in [
            vec![Direction::North, Direction::East, Direction::South, Direction::West],
            vec![Direction::North, Direction::East, Direction::South],
            vec![Direction::East, Direction::South, Direction::West],
        ] {
            let cm = ConflictMatrix::for_legs(&legs);
            let n = legs.len() * (legs.len() - 1);
            assert_eq!(cm.movements().len(), n);
            for &a in cm.movements() {
                for &b in cm.movements() {
                    assert_eq!(cm.conflicts(a, b), cm.conflicts(b, a));
                    assert!(cm.table.contains_key(&(a, b)));
                }
                assert!(!cm.conflicts(a, a), "self pairs share the approach");
            }
        }
    }

    #[test]
    fn queue_length_counts_only_stopped() {
        let mut w = world(0.0, 0.6, 1);
        let center = w.net().intersection(0).unwrap();
        let n_in = center.approach_from(Direction::North).unwrap();
        let s_out = center.departure_toward(Direction::South).unwrap();
        let len = w.net().segment(n_in).unwrap().length;
        // Three stopped plus one moving at 2 m/s inside the zone.
        stage_vehicle(&mut w, 1, VehicleClass::Hv, vec![n_in, s_out], 0, len - 10.0, 0.0);
        stage_vehicle(&mut w, 2, VehicleClass::Hv, vec![n_in, s_out], 0, len - 17.5, 0.0);
        stage_vehicle(&mut w, 3, VehicleClass::Hv, vec![n_in, s_out], 0, len - 25.0, 0.0);
        stage_vehicle(&mut w, 4, VehicleClass::Hv, vec![n_in, s_out], 0, len - 29.9, 2.0);
        assert_eq!(w.queue_length(0, Direction::North).unwrap(), 3);
        assert_eq!(w.queue_length(0, Direction::East).unwrap(), 0);
    }

    #[test]
    fn avg_wait_is_zone_mean() {
        let mut w = world(0.0, 0.6, 1);
        let center = w.net().intersection(0).unwrap();
        let n_in = center.approach_from(Direction::North).unwrap();
        let s_out = center.departure_toward(Direction::South).unwrap();
        let len = w.net().segment(n_in).unwrap().length;
        stage_vehicle(&mut w, 1, VehicleClass::Hv, vec![n_in, s_out], 0, len - 10.0, 0.0);
        stage_vehicle(&mut w, 2, VehicleClass::Hv, vec![n_in, s_out], 0, len - 17.5, 0.0);
        set_wait(&mut w, 1, 4.0);
        set_wait(&mut w, 2, 6.0);
        assert_abs_diff_eq!(w.avg_wait(0, Direction::North).unwrap(), 5.0);
        assert_eq!(w.avg_wait(0, Direction::South).unwrap(), 0.0);
    }

    #[test]
    fn queue_and_wait_match_full_scan_oracle() {
        // Randomized scenario vs an independent brute-force recount.
        let mut w = world(0.3, 0.5, 9);
        let ctl = ControlContext::unsignalized();
        for _ in 0..600 {
            w.step(&BTreeMap::new(), &ctl).unwrap();
        }
        let node = w.net().intersection(0).unwrap();
        for (dir, seg_id) in node.approaches().iter().copied() {
            let seg = w.net().segment(seg_id).unwrap();
            let zone_start = seg.length - node.control_zone_radius;
            let mut count = 0usize;
            let mut waits = Vec::new();
            for v in w.vehicles() {
                if v.current_segment() != seg_id || v.longitudinal_pos < zone_start {
                    continue;
                }
                waits.push(v.accumulated_wait);
                if v.speed < V_STOP {
                    count += 1;
                }
            }
            let expected_wait = if waits.is_empty() {
                0.0
            } else {
                waits.iter().sum::<f64>() / waits.len() as f64
            };
            assert_eq!(w.queue_length(node.id, dir).unwrap(), count);
            assert_abs_diff_eq!(w.avg_wait(node.id, dir).unwrap(), expected_wait);
        }
    }

    #[test]
    fn unknown_approach_errors() {
        let net = Arc::new(crate::net::net17_standin());
        let demand = DemandConfig::uniform(&net, 0.0, 0.6, 1);
        let w = WorldState::new(net, demand, IdmParams::default(), (0.0, f64::INFINITY), 0);
        // Intersection 0 is three-way without a North leg in the stand-in?
        // Find some three-way and use its missing direction.
        let three = w
            .net()
            .intersections()
            .find(|i| i.kind == crate::net::IntersectionKind::ThreeWay)
            .unwrap();
        let missing = Direction::ALL
            .into_iter()
            .find(|d| three.approach_from(*d).is_none())
            .unwrap();
        assert!(matches!(
            w.queue_length(three.id, missing),
            Err(SimError::UnknownApproach { .. })
        ));
    }

    #[test]
    fn occupancy_matches_scratch_recount() {
        let mut w = world(0.3, 0.5, 11);
        let ctl = ControlContext::unsignalized();
        for _ in 0..400 {
            w.step(&BTreeMap::new(), &ctl).unwrap();
            // Independent recount of core membership.
            let mut expected: BTreeMap<IntersectionId, BTreeSet<VehicleId>> = BTreeMap::new();
            for v in w.vehicles() {
                let seg = w.net().segment(v.current_segment()).unwrap();
                let head = w.net().intersection(seg.to).unwrap();
                if !head.is_boundary()
                    && (seg.length - v.longitudinal_pos) < CORE_RADIUS
                    && v.next_segment().is_some()
                {
                    expected.entry(head.id).or_default().insert(v.id);
                }
                let tail = w.net().intersection(seg.from).unwrap();
                if !tail.is_boundary()
                    && v.longitudinal_pos < CORE_RADIUS
                    && v.previous_segment().is_some()
                {
                    expected.entry(tail.id).or_default().insert(v.id);
                }
            }
            let mut actual: BTreeMap<IntersectionId, BTreeSet<VehicleId>> = BTreeMap::new();
            for (&i, entries) in &w.core_occupancy {
                if entries.is_empty() {
                    continue;
                }
                actual.insert(i, entries.iter().map(|e| e.vehicle).collect());
            }
            expected.retain(|_, s| !s.is_empty());
            assert_eq!(actual, expected, "occupancy mismatch at t={}", w.time());
        }
    }

    #[test]
    fn conservation_and_kinematics_random_run() {
        let mut w = world(0.25, 0.5, 13);
        let ctl = ControlContext::unsignalized();
        let mut prev_progress: BTreeMap<VehicleId, (usize, f64)> = BTreeMap::new();
        for _ in 0..2000 {
            w.step(&BTreeMap::new(), &ctl).unwrap();
            assert!(w.conservation_holds());
            if let Some(gap) = w.min_same_segment_gap() {
                assert!(gap >= 0.0, "negative gap {gap} at t={}", w.time());
            }
            for v in w.vehicles() {
                if let Some(&(seg_idx, pos)) = prev_progress.get(&v.id) {
                    let moved_forward = v.segment_index > seg_idx
                        || (v.segment_index == seg_idx && v.longitudinal_pos >= pos);
                    assert!(moved_forward, "vehicle {} moved backward", v.id);
                }
            }
            prev_progress = w
                .vehicles()
                .map(|v| (v.id, (v.segment_index, v.longitudinal_pos)))
                .collect();
        }
        assert!(w.spawned_total() > 0);
    }

    #[test]
    fn determinism_same_seed_same_trajectory() {
        let run = |seed: u64| -> Vec<(f64, usize, u64, String)> {
            let mut w = world(0.2, 0.6, seed);
            let ctl = ControlContext::unsignalized();
            let mut log = Vec::new();
            for _ in 0..600 {
                w.step(&BTreeMap::new(), &ctl).unwrap();
                if w.step_count % 100 == 0 {
                    let positions: String = w
                        .vehicles()
                        .map(|v| format!("{}:{:.12};", v.id, v.longitudinal_pos))
                        .collect();
                    log.push((w.time(), w.active_count(), w.spawned_total(), positions));
                }
            }
            log
        };
        assert_eq!(run(21), run(21));
        assert_ne!(run(21), run(22));
    }

    #[test]
    fn series_sampled_at_whole_seconds() {
        let mut w = world(0.1, 0.6, 5);
        let ctl = ControlContext::unsignalized();
        for _ in 0..20 {
            w.step(&BTreeMap::new(), &ctl).unwrap();
        }
        let series = w.metrics().series();
        assert_eq!(series.len(), 10);
        assert_abs_diff_eq!(series[0].t, 1.0);
        assert_abs_diff_eq!(series[9].t, 10.0);
    }

}
