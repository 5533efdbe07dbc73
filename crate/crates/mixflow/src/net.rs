//! Road networks as directed graphs of intersections and road segments.
//!
//! Networks are loaded from a JSON document (see [`load_network`]) or built
//! with [`generate_grid`] / [`net17_standin`]. A network is immutable after
//! construction and safe to share read-only across workers.
//!
//! Conventions: positions are in meters with `y` increasing northward; a
//! vehicle travels from a segment's `from` (tail) to its `to` (head). The
//! *approach direction* of an incoming segment is the compass direction the
//! traffic arrives from, derived from the tail's position relative to the
//! head.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use thiserror::Error;

pub type IntersectionId = u32;
pub type SegmentId = u32;

/// Default control zone radius in meters.
pub const DEFAULT_ZONE_RADIUS: f64 = 30.0;
/// Default speed limit for generated networks, m/s (50 km/h).
pub const DEFAULT_SPEED_LIMIT: f64 = 13.9;
/// Minimum segment length so that adjacent control zones never overlap.
pub const MIN_SEGMENT_LENGTH: f64 = 2.0 * DEFAULT_ZONE_RADIUS;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation failed ({rule}): {detail}")]
    Validation { rule: &'static str, detail: String },
    #[error("unknown intersection id {0}")]
    UnknownIntersection(IntersectionId),
    #[error("unknown segment id {0}")]
    UnknownSegment(SegmentId),
    #[error("segment {segment} does not leave intersection {at}")]
    NotOutgoing {
        segment: SegmentId,
        at: IntersectionId,
    },
    #[error("grid block length must exceed {min} m to keep control zones disjoint, got {got}")]
    BlockTooShort { min: f64, got: f64 },
}

/// Compass direction of an approach, ordered N < E < S < W.
///
/// This ordering fixes the observation slot layout and the all-way-stop
/// tie-break, so it must never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    /// Slot index in the canonical N, E, S, W ordering.
    pub fn index(self) -> usize {
        match self {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
        }
    }

    /// Exit direction of a left turn for traffic arriving from `self`
    /// (right-hand driving): a vehicle from the north travels south and
    /// turns left toward the east.
    pub fn left_exit(self) -> Direction {
        match self {
            Direction::North => Direction::East,
            Direction::East => Direction::South,
            Direction::South => Direction::West,
            Direction::West => Direction::North,
        }
    }

    /// Exit direction of a right turn for traffic arriving from `self`.
    pub fn right_exit(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::East => Direction::North,
            Direction::South => Direction::East,
            Direction::West => Direction::South,
        }
    }

    fn unit(self) -> (f64, f64) {
        match self {
            Direction::North => (0.0, 1.0),
            Direction::East => (1.0, 0.0),
            Direction::South => (0.0, -1.0),
            Direction::West => (-1.0, 0.0),
        }
    }

    /// Dominant compass direction of the displacement `(dx, dy)`.
    /// Vertical wins ties so the mapping is total.
    fn of_displacement(dx: f64, dy: f64) -> Direction {
        if dy.abs() >= dx.abs() {
            if dy > 0.0 {
                Direction::North
            } else {
                Direction::South
            }
        } else if dx > 0.0 {
            Direction::East
        } else {
            Direction::West
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionKind {
    ThreeWay,
    FourWay,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: IntersectionId,
    pub kind: IntersectionKind,
    /// Position in meters, y northward. For reporting and direction
    /// derivation only; dynamics are 1-D per segment.
    pub position: (f64, f64),
    pub control_zone_radius: f64,
    /// Incoming segments in canonical N, E, S, W order, absent directions
    /// omitted.
    approaches: Vec<(Direction, SegmentId)>,
    /// Outgoing segments keyed the same way (exit side of the intersection).
    departures: Vec<(Direction, SegmentId)>,
}

impl Intersection {
    pub fn approaches(&self) -> &[(Direction, SegmentId)] {
        &self.approaches
    }

    pub fn departures(&self) -> &[(Direction, SegmentId)] {
        &self.departures
    }

    pub fn approach_from(&self, d: Direction) -> Option<SegmentId> {
        self.approaches
            .iter()
            .find(|(dir, _)| *dir == d)
            .map(|(_, s)| *s)
    }

    pub fn departure_toward(&self, d: Direction) -> Option<SegmentId> {
        self.departures
            .iter()
            .find(|(dir, _)| *dir == d)
            .map(|(_, s)| *s)
    }

    /// Directions that have an approach, in canonical order.
    pub fn legs(&self) -> Vec<Direction> {
        self.approaches.iter().map(|(d, _)| *d).collect()
    }

    pub fn is_boundary(&self) -> bool {
        self.kind == IntersectionKind::Boundary
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub from: IntersectionId,
    pub to: IntersectionId,
    pub length: f64,
    pub speed_limit: f64,
    pub lane_count: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    intersections: BTreeMap<IntersectionId, Intersection>,
    segments: BTreeMap<SegmentId, RoadSegment>,
    entries: Vec<IntersectionId>,
    exits: Vec<IntersectionId>,
    zone_radius: f64,
}

// ---------------------------------------------------------------------------
// Document schema
// ---------------------------------------------------------------------------

fn default_zone_radius() -> f64 {
    DEFAULT_ZONE_RADIUS
}

/// On-disk network description. Unknown fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    #[serde(default = "default_zone_radius")]
    pub zone_radius: f64,
    pub intersections: Vec<IntersectionDoc>,
    pub segments: Vec<SegmentDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionDoc {
    pub id: IntersectionId,
    pub kind: IntersectionKind,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDoc {
    pub id: SegmentId,
    pub from: IntersectionId,
    pub to: IntersectionId,
    pub length: f64,
    pub speed_limit: f64,
}

/// Parse and validate a network document.
pub fn load_network(text: &str) -> Result<RoadNetwork, NetError> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| NetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    RoadNetwork::from_doc(&doc)
}

/// Render a network back to its canonical document form.
pub fn serialize_network(net: &RoadNetwork) -> String {
    let doc = net.to_doc();
    let mut out = serde_json::to_string_pretty(&doc).expect("network doc serializes");
    out.push('\n');
    out
}

impl RoadNetwork {
    pub fn from_doc(doc: &NetworkDoc) -> Result<Self, NetError> {
        if !(doc.zone_radius > 0.0) {
            return Err(NetError::Validation {
                rule: "zone_radius_positive",
                detail: format!("zone_radius = {}", doc.zone_radius),
            });
        }

        let mut intersections: BTreeMap<IntersectionId, Intersection> = BTreeMap::new();
        for i in &doc.intersections {
            let prev = intersections.insert(
                i.id,
                Intersection {
                    id: i.id,
                    kind: i.kind,
                    position: (i.x, i.y),
                    control_zone_radius: doc.zone_radius,
                    approaches: Vec::new(),
                    departures: Vec::new(),
                },
            );
            if prev.is_some() {
                return Err(NetError::Validation {
                    rule: "unique_intersection_id",
                    detail: format!("intersection id {} appears twice", i.id),
                });
            }
        }

        let mut segments: BTreeMap<SegmentId, RoadSegment> = BTreeMap::new();
        for s in &doc.segments {
            if !intersections.contains_key(&s.from) {
                return Err(NetError::Validation {
                    rule: "segment_endpoints_exist",
                    detail: format!("segment {} references missing intersection {}", s.id, s.from),
                });
            }
            if !intersections.contains_key(&s.to) {
                return Err(NetError::Validation {
                    rule: "segment_endpoints_exist",
                    detail: format!("segment {} references missing intersection {}", s.id, s.to),
                });
            }
            if s.from == s.to {
                return Err(NetError::Validation {
                    rule: "segment_distinct_endpoints",
                    detail: format!("segment {} is a self-loop at {}", s.id, s.from),
                });
            }
            if !(s.length > 0.0) {
                return Err(NetError::Validation {
                    rule: "segment_length_positive",
                    detail: format!("segment {} has length {}", s.id, s.length),
                });
            }
            if s.length <= 2.0 * doc.zone_radius {
                return Err(NetError::Validation {
                    rule: "segment_longer_than_zones",
                    detail: format!(
                        "segment {} has length {} ≤ 2×zone_radius {}",
                        s.id,
                        s.length,
                        2.0 * doc.zone_radius
                    ),
                });
            }
            if !(s.speed_limit > 0.0) {
                return Err(NetError::Validation {
                    rule: "speed_limit_positive",
                    detail: format!("segment {} has speed limit {}", s.id, s.speed_limit),
                });
            }
            let prev = segments.insert(
                s.id,
                RoadSegment {
                    id: s.id,
                    from: s.from,
                    to: s.to,
                    length: s.length,
                    speed_limit: s.speed_limit,
                    lane_count: 1,
                },
            );
            if prev.is_some() {
                return Err(NetError::Validation {
                    rule: "unique_segment_id",
                    detail: format!("segment id {} appears twice", s.id),
                });
            }
        }

        // Two-way streets: every directed segment has a reverse twin.
        let pairs: BTreeSet<(IntersectionId, IntersectionId)> =
            segments.values().map(|s| (s.from, s.to)).collect();
        for s in segments.values() {
            if !pairs.contains(&(s.to, s.from)) {
                return Err(NetError::Validation {
                    rule: "reverse_segment_exists",
                    detail: format!("segment {} ({} -> {}) has no reverse", s.id, s.from, s.to),
                });
            }
        }

        // Attach approaches/departures with compass directions.
        let positions: BTreeMap<IntersectionId, (f64, f64)> = intersections
            .values()
            .map(|i| (i.id, i.position))
            .collect();
        for s in segments.values() {
            let head = positions[&s.to];
            let tail = positions[&s.from];
            let dir = Direction::of_displacement(tail.0 - head.0, tail.1 - head.1);
            let node = intersections.get_mut(&s.to).expect("endpoint checked");
            if node.approaches.iter().any(|(d, _)| *d == dir) {
                return Err(NetError::Validation {
                    rule: "one_approach_per_direction",
                    detail: format!(
                        "intersection {} has two approaches from {:?}",
                        node.id, dir
                    ),
                });
            }
            node.approaches.push((dir, s.id));

            // The departure side is where the segment leaves by: the exit
            // direction seen from the tail intersection.
            let exit_dir = Direction::of_displacement(head.0 - tail.0, head.1 - tail.1);
            let node = intersections.get_mut(&s.from).expect("endpoint checked");
            if node.departures.iter().any(|(d, _)| *d == exit_dir) {
                return Err(NetError::Validation {
                    rule: "one_departure_per_direction",
                    detail: format!(
                        "intersection {} has two departures toward {:?}",
                        node.id, exit_dir
                    ),
                });
            }
            node.departures.push((exit_dir, s.id));
        }
        for node in intersections.values_mut() {
            node.approaches.sort_by_key(|(d, _)| d.index());
            node.departures.sort_by_key(|(d, _)| d.index());
        }

        // Kind vs degree.
        for node in intersections.values() {
            let expected = match node.kind {
                IntersectionKind::ThreeWay => 3,
                IntersectionKind::FourWay => 4,
                IntersectionKind::Boundary => 1,
            };
            if node.approaches.len() != expected || node.departures.len() != expected {
                return Err(NetError::Validation {
                    rule: "kind_matches_degree",
                    detail: format!(
                        "intersection {} is {:?} but has {} approaches / {} departures",
                        node.id,
                        node.kind,
                        node.approaches.len(),
                        node.departures.len()
                    ),
                });
            }
        }

        let entries: Vec<IntersectionId> = intersections
            .values()
            .filter(|i| i.is_boundary() && !i.departures.is_empty())
            .map(|i| i.id)
            .collect();
        let exits: Vec<IntersectionId> = intersections
            .values()
            .filter(|i| i.is_boundary() && !i.approaches.is_empty())
            .map(|i| i.id)
            .collect();
        if entries.is_empty() || exits.is_empty() {
            return Err(NetError::Validation {
                rule: "has_entries_and_exits",
                detail: "network has no boundary entry or exit".to_string(),
            });
        }

        let net = RoadNetwork {
            intersections,
            segments,
            entries,
            exits,
            zone_radius: doc.zone_radius,
        };
        net.check_connectivity()?;
        Ok(net)
    }

    fn check_connectivity(&self) -> Result<(), NetError> {
        // Weak connectivity over undirected adjacency.
        let mut undirected: BTreeMap<IntersectionId, Vec<IntersectionId>> = BTreeMap::new();
        for s in self.segments.values() {
            undirected.entry(s.from).or_default().push(s.to);
            undirected.entry(s.to).or_default().push(s.from);
        }
        let start = *self.intersections.keys().next().expect("nonempty");
        let mut seen: BTreeSet<IntersectionId> = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(n) = queue.pop_front() {
            for &m in undirected.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        if let Some(missing) = self.intersections.keys().find(|id| !seen.contains(id)) {
            return Err(NetError::Validation {
                rule: "weakly_connected",
                detail: format!("intersection {missing} is disconnected"),
            });
        }

        // Forward reachability from entries, backward from exits.
        let forward = self.reach(&self.entries, |s| (s.from, s.to));
        let backward = self.reach(&self.exits, |s| (s.to, s.from));
        for node in self.intersections.values() {
            if node.is_boundary() {
                continue;
            }
            if !forward.contains(&node.id) {
                return Err(NetError::Validation {
                    rule: "reachable_from_entry",
                    detail: format!("intersection {} unreachable from any entry", node.id),
                });
            }
            if !backward.contains(&node.id) {
                return Err(NetError::Validation {
                    rule: "reaches_exit",
                    detail: format!("intersection {} cannot reach any exit", node.id),
                });
            }
        }
        Ok(())
    }

    fn reach(
        &self,
        seeds: &[IntersectionId],
        orient: impl Fn(&RoadSegment) -> (IntersectionId, IntersectionId),
    ) -> BTreeSet<IntersectionId> {
        let mut adj: BTreeMap<IntersectionId, Vec<IntersectionId>> = BTreeMap::new();
        for s in self.segments.values() {
            let (a, b) = orient(s);
            adj.entry(a).or_default().push(b);
        }
        let mut seen: BTreeSet<IntersectionId> = seeds.iter().copied().collect();
        let mut queue: VecDeque<IntersectionId> = seeds.iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            for &m in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    pub fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            zone_radius: self.zone_radius,
            intersections: self
                .intersections
                .values()
                .map(|i| IntersectionDoc {
                    id: i.id,
                    kind: i.kind,
                    x: i.position.0,
                    y: i.position.1,
                })
                .collect(),
            segments: self
                .segments
                .values()
                .map(|s| SegmentDoc {
                    id: s.id,
                    from: s.from,
                    to: s.to,
                    length: s.length,
                    speed_limit: s.speed_limit,
                })
                .collect(),
        }
    }

    pub fn intersections(&self) -> impl Iterator<Item = &Intersection> {
        self.intersections.values()
    }

    pub fn segments(&self) -> impl Iterator<Item = &RoadSegment> {
        self.segments.values()
    }

    pub fn intersection(&self, id: IntersectionId) -> Result<&Intersection, NetError> {
        self.intersections
            .get(&id)
            .ok_or(NetError::UnknownIntersection(id))
    }

    pub fn segment(&self, id: SegmentId) -> Result<&RoadSegment, NetError> {
        self.segments.get(&id).ok_or(NetError::UnknownSegment(id))
    }

    pub fn entries(&self) -> &[IntersectionId] {
        &self.entries
    }

    pub fn exits(&self) -> &[IntersectionId] {
        &self.exits
    }

    pub fn zone_radius(&self) -> f64 {
        self.zone_radius
    }

    pub fn internal_count(&self) -> usize {
        self.intersections.values().filter(|i| !i.is_boundary()).count()
    }

    /// Head intersection of `movement`, which must leave `at`.
    pub fn downstream(
        &self,
        at: IntersectionId,
        movement: SegmentId,
    ) -> Result<IntersectionId, NetError> {
        self.intersection(at)?;
        let seg = self.segment(movement)?;
        if seg.from != at {
            return Err(NetError::NotOutgoing {
                segment: movement,
                at,
            });
        }
        Ok(seg.to)
    }

    /// The single outgoing segment of a boundary entry node.
    pub fn entry_segment(&self, entry: IntersectionId) -> Result<SegmentId, NetError> {
        let node = self.intersection(entry)?;
        node.departures
            .first()
            .map(|(_, s)| *s)
            .ok_or(NetError::UnknownIntersection(entry))
    }

    /// Minimum-length route between two intersections as a segment list.
    /// Ties are broken deterministically by (cost, node id).
    pub fn shortest_path(
        &self,
        from: IntersectionId,
        to: IntersectionId,
    ) -> Option<Vec<SegmentId>> {
        #[derive(PartialEq)]
        struct Candidate {
            cost: f64,
            node: IntersectionId,
        }
        impl Eq for Candidate {}
        impl Ord for Candidate {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                // Reversed for a min-heap.
                other
                    .cost
                    .total_cmp(&self.cost)
                    .then(other.node.cmp(&self.node))
            }
        }
        impl PartialOrd for Candidate {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut out: BTreeMap<IntersectionId, Vec<SegmentId>> = BTreeMap::new();
        for s in self.segments.values() {
            out.entry(s.from).or_default().push(s.id);
        }

        let mut dist: BTreeMap<IntersectionId, f64> = BTreeMap::new();
        let mut prev: BTreeMap<IntersectionId, SegmentId> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(from, 0.0);
        heap.push(Candidate {
            cost: 0.0,
            node: from,
        });
        while let Some(Candidate { cost, node }) = heap.pop() {
            if node == to {
                break;
            }
            if cost > *dist.get(&node).unwrap_or(&f64::INFINITY) {
                continue;
            }
            for &seg_id in out.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
                let seg = &self.segments[&seg_id];
                let next_cost = cost + seg.length;
                if next_cost < *dist.get(&seg.to).unwrap_or(&f64::INFINITY) {
                    dist.insert(seg.to, next_cost);
                    prev.insert(seg.to, seg_id);
                    heap.push(Candidate {
                        cost: next_cost,
                        node: seg.to,
                    });
                }
            }
        }

        if !dist.contains_key(&to) {
            return None;
        }
        let mut path = Vec::new();
        let mut node = to;
        while node != from {
            let seg_id = *prev.get(&node)?;
            path.push(seg_id);
            node = self.segments[&seg_id].from;
        }
        path.reverse();
        Some(path)
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Internal builder used by the generators; collects roads as undirected
/// pairs and emits both directed segments with sequential ids.
struct NetBuilder {
    zone_radius: f64,
    intersections: Vec<IntersectionDoc>,
    segments: Vec<SegmentDoc>,
    next_segment: SegmentId,
}

impl NetBuilder {
    fn new(zone_radius: f64) -> Self {
        NetBuilder {
            zone_radius,
            intersections: Vec::new(),
            segments: Vec::new(),
            next_segment: 0,
        }
    }

    fn node(&mut self, id: IntersectionId, kind: IntersectionKind, x: f64, y: f64) {
        self.intersections.push(IntersectionDoc { id, kind, x, y });
    }

    fn road(&mut self, a: IntersectionId, b: IntersectionId, length: f64, speed_limit: f64) {
        for (from, to) in [(a, b), (b, a)] {
            self.segments.push(SegmentDoc {
                id: self.next_segment,
                from,
                to,
                length,
                speed_limit,
            });
            self.next_segment += 1;
        }
    }

    fn build(self) -> Result<RoadNetwork, NetError> {
        RoadNetwork::from_doc(&NetworkDoc {
            zone_radius: self.zone_radius,
            intersections: self.intersections,
            segments: self.segments,
        })
    }
}

/// Generate a `rows` x `cols` grid of four-way intersections with boundary
/// stubs on the perimeter. Every road is two-way and `block_length` long.
///
/// Internal node `(r, c)` has id `r*cols + c`; stubs are numbered from
/// `rows*cols` in south, north, west, east order.
pub fn generate_grid(
    rows: u32,
    cols: u32,
    block_length: f64,
) -> Result<RoadNetwork, NetError> {
    assert!(rows >= 1 && cols >= 1, "grid must be at least 1x1");
    if block_length <= MIN_SEGMENT_LENGTH {
        return Err(NetError::BlockTooShort {
            min: MIN_SEGMENT_LENGTH,
            got: block_length,
        });
    }
    let speed = DEFAULT_SPEED_LIMIT;
    let mut b = NetBuilder::new(DEFAULT_ZONE_RADIUS);
    let id_of = |r: u32, c: u32| r * cols + c;

    for r in 0..rows {
        for c in 0..cols {
            b.node(
                id_of(r, c),
                IntersectionKind::FourWay,
                c as f64 * block_length,
                r as f64 * block_length,
            );
        }
    }
    // Internal roads: east and north neighbors only, so each pair is added once.
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                b.road(id_of(r, c), id_of(r, c + 1), block_length, speed);
            }
            if r + 1 < rows {
                b.road(id_of(r, c), id_of(r + 1, c), block_length, speed);
            }
        }
    }
    // Boundary stubs: south row, north row, west column, east column.
    let mut next = rows * cols;
    for c in 0..cols {
        b.node(
            next,
            IntersectionKind::Boundary,
            c as f64 * block_length,
            -block_length,
        );
        b.road(id_of(0, c), next, block_length, speed);
        next += 1;
    }
    for c in 0..cols {
        b.node(
            next,
            IntersectionKind::Boundary,
            c as f64 * block_length,
            rows as f64 * block_length,
        );
        b.road(id_of(rows - 1, c), next, block_length, speed);
        next += 1;
    }
    for r in 0..rows {
        b.node(
            next,
            IntersectionKind::Boundary,
            -block_length,
            r as f64 * block_length,
        );
        b.road(id_of(r, 0), next, block_length, speed);
        next += 1;
    }
    for r in 0..rows {
        b.node(
            next,
            IntersectionKind::Boundary,
            cols as f64 * block_length,
            r as f64 * block_length,
        );
        b.road(id_of(r, cols - 1), next, block_length, speed);
        next += 1;
    }
    b.build()
}

/// The canonical 17-intersection stand-in network: three arterial rows of
/// five intersections plus two northern spurs, mixing four-way and
/// three-way configurations. Blocks are 200 m, stubs 100 m.
pub fn net17_standin() -> RoadNetwork {
    const BLOCK: f64 = 200.0;
    const STUB: f64 = 100.0;
    let speed = DEFAULT_SPEED_LIMIT;
    let mut b = NetBuilder::new(DEFAULT_ZONE_RADIUS);

    // Internal ids 0..17: rows south to north, then the two spur nodes.
    // Row 0 (y=0): 0..5, row 1 (y=200): 5..10, row 2 (y=400): 10..15,
    // spurs (y=600): 15 above column 1, 16 above column 3.
    let row_node = |row: u32, col: u32| row * 5 + col;
    let kinds = [
        // row 0
        IntersectionKind::ThreeWay,
        IntersectionKind::FourWay,
        IntersectionKind::FourWay,
        IntersectionKind::FourWay,
        IntersectionKind::ThreeWay,
        // row 1
        IntersectionKind::FourWay,
        IntersectionKind::FourWay,
        IntersectionKind::FourWay,
        IntersectionKind::FourWay,
        IntersectionKind::FourWay,
        // row 2
        IntersectionKind::ThreeWay,
        IntersectionKind::FourWay,
        IntersectionKind::ThreeWay,
        IntersectionKind::FourWay,
        IntersectionKind::ThreeWay,
    ];
    for row in 0..3u32 {
        for col in 0..5u32 {
            let id = row_node(row, col);
            b.node(
                id,
                kinds[id as usize],
                col as f64 * BLOCK,
                row as f64 * BLOCK,
            );
        }
    }
    b.node(15, IntersectionKind::ThreeWay, 200.0, 600.0);
    b.node(16, IntersectionKind::ThreeWay, 600.0, 600.0);

    // Arterials along each row.
    for row in 0..3 {
        for col in 0..4 {
            b.road(row_node(row, col), row_node(row, col + 1), BLOCK, speed);
        }
    }
    // Cross streets between rows.
    for col in 0..5 {
        b.road(row_node(0, col), row_node(1, col), BLOCK, speed);
        b.road(row_node(1, col), row_node(2, col), BLOCK, speed);
    }
    // Northern spurs.
    b.road(row_node(2, 1), 15, BLOCK, speed);
    b.road(row_node(2, 3), 16, BLOCK, speed);

    // Boundary stubs; ids from 17. (node, direction of the stub)
    let stubs: [(IntersectionId, Direction); 13] = [
        (0, Direction::West),
        (1, Direction::South),
        (2, Direction::South),
        (3, Direction::South),
        (4, Direction::East),
        (5, Direction::West),
        (9, Direction::East),
        (10, Direction::West),
        (14, Direction::East),
        (15, Direction::North),
        (15, Direction::West),
        (16, Direction::North),
        (16, Direction::East),
    ];
    let positions: BTreeMap<IntersectionId, (f64, f64)> = b
        .intersections
        .iter()
        .map(|i| (i.id, (i.x, i.y)))
        .collect();
    let mut next = 17u32;
    for (node, dir) in stubs {
        let (x, y) = positions[&node];
        let (ux, uy) = dir.unit();
        b.node(next, IntersectionKind::Boundary, x + ux * STUB, y + uy * STUB);
        b.road(node, next, STUB, speed);
        next += 1;
    }

    b.build().expect("net17 stand-in is valid by construction")
}

/// The shipped document form of [`net17_standin`].
pub fn net17_document() -> &'static str {
    include_str!("../assets/net17.json")
}
