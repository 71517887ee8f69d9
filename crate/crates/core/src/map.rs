//! Lane-level maps: centerline geometry, routes, conflict zones and static
//! right of way.
//!
//! Conflict zones are always recomputed from geometry. Each lane is swept by a
//! corridor of [`CORRIDOR_HALF_WIDTH`] on either side of its centerline; two
//! lanes that are neither consecutive nor diverging siblings conflict wherever
//! their corridors overlap.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Polyline, Pose, Vec2};

/// Half of the swept vehicle width used to inflate lane centerlines.
pub const CORRIDOR_HALF_WIDTH: f64 = 1.5;

const ZONE_SAMPLE_STEP: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map document could not be parsed: {0}")]
    Parse(String),
    #[error("map document could not be serialized: {0}")]
    Serialize(String),
    #[error("lane id {0:?} is defined more than once")]
    DuplicateLane(String),
    #[error("lane {lane:?} references unknown successor {successor:?}")]
    DanglingReference { lane: String, successor: String },
    #[error("lane {0:?} has a degenerate centerline")]
    DegenerateCenterline(String),
    #[error("lane {lane:?} has invalid speed limit {limit}")]
    InvalidSpeedLimit { lane: String, limit: f64 },
    #[error("unknown lane {0:?}")]
    UnknownLane(String),
    #[error("arc length {s} outside lane {lane:?} of length {length}")]
    OutOfRange { lane: String, s: f64, length: f64 },
    #[error("no route from {0:?} to {1:?}")]
    UnknownRoute(Arm, Arm),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    North,
    East,
    West,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::North, Arm::East, Arm::West];

    pub fn letter(self) -> char {
        match self {
            Arm::North => 'N',
            Arm::East => 'E',
            Arm::West => 'W',
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Arm::North => "north",
            Arm::East => "east",
            Arm::West => "west",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub arm: Arm,
    pub speed_limit: f64,
    pub successors: Vec<String>,
    /// Lower rank has right of way.
    pub priority_rank: i32,
    centerline: Polyline,
}

impl Lane {
    pub fn new(
        id: impl Into<String>,
        arm: Arm,
        speed_limit: f64,
        priority_rank: i32,
        centerline: Vec<Vec2>,
        successors: Vec<String>,
    ) -> Self {
        Self {
            id: id.into(),
            arm,
            speed_limit,
            successors,
            priority_rank,
            centerline: Polyline::new(centerline),
        }
    }

    pub fn centerline(&self) -> &Polyline {
        &self.centerline
    }

    pub fn length(&self) -> f64 {
        self.centerline.length()
    }
}

/// Linear interpolation along the lane polyline; heading is the segment direction.
pub fn pose_at(lane: &Lane, s: f64) -> Result<Pose, MapError> {
    let length = lane.length();
    if !(0.0..=length).contains(&s) {
        return Err(MapError::OutOfRange {
            lane: lane.id.clone(),
            s,
            length,
        });
    }
    Ok(lane.centerline.pose_at(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZoneKind {
    Crossing,
    Merging,
}

/// Overlap of two lane corridors, bounded by arc lengths on each lane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConflictZone {
    pub lane_a: String,
    pub lane_b: String,
    pub entry_a: f64,
    pub exit_a: f64,
    pub entry_b: f64,
    pub exit_b: f64,
    pub kind: ZoneKind,
}

impl ConflictZone {
    pub fn swapped(&self) -> ConflictZone {
        ConflictZone {
            lane_a: self.lane_b.clone(),
            lane_b: self.lane_a.clone(),
            entry_a: self.entry_b,
            exit_a: self.exit_b,
            entry_b: self.entry_a,
            exit_b: self.exit_a,
            kind: self.kind,
        }
    }
}

/// Index of a route inside its [`LaneMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RouteId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub id: String,
    pub lanes: Vec<String>,
    pub source_arm: Arm,
    pub target_arm: Arm,
    lane_indices: Vec<usize>,
    offsets: Vec<f64>,
    length: f64,
    rank: i32,
    turn_angle: f64,
}

impl Route {
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Arc length of the junction entry (end of the approach lane). Doubles as
    /// the stop line for every arm.
    pub fn entry_s(&self) -> f64 {
        self.offsets.get(1).copied().unwrap_or(self.length)
    }

    /// Arc length of the junction exit (start of the exit lane).
    pub fn exit_s(&self) -> f64 {
        if self.offsets.len() >= 2 {
            self.offsets[self.offsets.len() - 1]
        } else {
            self.length
        }
    }

    pub fn lane_indices(&self) -> &[usize] {
        &self.lane_indices
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Route offset of a lane index, if the lane lies on this route.
    pub fn offset_of(&self, lane: usize) -> Option<f64> {
        self.lane_indices
            .iter()
            .position(|&l| l == lane)
            .map(|i| self.offsets[i])
    }

    /// Position in `lane_indices` of the lane that contains `s`.
    pub fn lane_slot_at(&self, s: f64) -> usize {
        let mut slot = 0;
        for (i, &o) in self.offsets.iter().enumerate() {
            if s >= o {
                slot = i;
            }
        }
        slot
    }

    /// Absolute heading change from the first to the last lane.
    pub fn turn_angle(&self) -> f64 {
        self.turn_angle
    }

    pub fn priority_rank(&self) -> i32 {
        self.rank
    }
}

/// A conflict zone expressed in the arc-length coordinates of two routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteZone {
    /// Index into [`LaneMap::zones`].
    pub zone: usize,
    pub entry_a: f64,
    pub exit_a: f64,
    pub entry_b: f64,
    pub exit_b: f64,
    pub kind: ZoneKind,
    /// Whether route `a` runs over the zone's `lane_a`.
    pub a_on_lane_a: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneDocument {
    pub id: String,
    pub arm: Arm,
    pub speed_limit_mps: f64,
    pub priority_rank: i32,
    pub centerline: Vec<[f64; 2]>,
    #[serde(default)]
    pub successors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<toml::Table>,
    pub lanes: Vec<LaneDocument>,
}

#[derive(Debug, Clone)]
pub struct LaneMap {
    lanes: Vec<Lane>,
    index: BTreeMap<String, usize>,
    zones: Vec<ConflictZone>,
    routes: Vec<Route>,
    route_zones: Vec<Vec<RouteZone>>,
}

impl PartialEq for LaneMap {
    fn eq(&self, other: &Self) -> bool {
        self.lanes == other.lanes && self.zones == other.zones && self.routes == other.routes
    }
}

/// Parses and validates a map document.
pub fn load_map(document: &str) -> Result<LaneMap, MapError> {
    let doc: MapDocument = toml::from_str(document).map_err(|e| MapError::Parse(e.to_string()))?;
    LaneMap::from_document(&doc)
}

impl LaneMap {
    pub fn from_document(doc: &MapDocument) -> Result<LaneMap, MapError> {
        let lanes = doc
            .lanes
            .iter()
            .map(|l| {
                Lane::new(
                    l.id.clone(),
                    l.arm,
                    l.speed_limit_mps,
                    l.priority_rank,
                    l.centerline.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
                    l.successors.clone(),
                )
            })
            .collect();
        LaneMap::new(lanes)
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            meta: None,
            lanes: self
                .lanes
                .iter()
                .map(|l| LaneDocument {
                    id: l.id.clone(),
                    arm: l.arm,
                    speed_limit_mps: l.speed_limit,
                    priority_rank: l.priority_rank,
                    centerline: l.centerline.points().iter().map(|p| [p.x, p.y]).collect(),
                    successors: l.successors.clone(),
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String, MapError> {
        toml::to_string(&self.to_document()).map_err(|e| MapError::Serialize(e.to_string()))
    }

    /// Validates lanes, then derives routes and conflict zones.
    pub fn new(lanes: Vec<Lane>) -> Result<LaneMap, MapError> {
        let mut index = BTreeMap::new();
        for (i, lane) in lanes.iter().enumerate() {
            if index.insert(lane.id.clone(), i).is_some() {
                return Err(MapError::DuplicateLane(lane.id.clone()));
            }
        }
        for lane in &lanes {
            validate_lane(lane)?;
            for succ in &lane.successors {
                if !index.contains_key(succ) {
                    return Err(MapError::DanglingReference {
                        lane: lane.id.clone(),
                        successor: succ.clone(),
                    });
                }
            }
        }
        let mut map = LaneMap {
            lanes,
            index,
            zones: Vec::new(),
            routes: Vec::new(),
            route_zones: Vec::new(),
        };
        map.zones = extract_conflict_zones(&map);
        map.routes = map.enumerate_routes();
        map.route_zones = map.build_route_zones();
        Ok(map)
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, idx: usize) -> &Lane {
        &self.lanes[idx]
    }

    pub fn lane_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn lane_by_id(&self, id: &str) -> Result<&Lane, MapError> {
        self.lane_index(id)
            .map(|i| &self.lanes[i])
            .ok_or_else(|| MapError::UnknownLane(id.to_string()))
    }

    pub fn zones(&self) -> &[ConflictZone] {
        &self.zones
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn route(&self, id: RouteId) -> &Route {
        &self.routes[id.0]
    }

    pub fn route_ids(&self) -> impl Iterator<Item = RouteId> + '_ {
        (0..self.routes.len()).map(RouteId)
    }

    pub fn find_route(&self, source: Arm, target: Arm) -> Result<RouteId, MapError> {
        self.routes
            .iter()
            .position(|r| r.source_arm == source && r.target_arm == target)
            .map(RouteId)
            .ok_or(MapError::UnknownRoute(source, target))
    }

    pub fn route_by_name(&self, name: &str) -> Option<RouteId> {
        self.routes.iter().position(|r| r.id == name).map(RouteId)
    }

    /// Routes starting at the given arm, in map order.
    pub fn routes_from(&self, arm: Arm) -> Vec<RouteId> {
        self.route_ids()
            .filter(|&r| self.route(r).source_arm == arm)
            .collect()
    }

    /// Routes that contain the lane.
    pub fn routes_through(&self, lane: usize) -> Vec<RouteId> {
        self.route_ids()
            .filter(|&r| self.route(r).lane_indices.contains(&lane))
            .collect()
    }

    /// Zones between two routes in route coordinates, sorted along `a`.
    pub fn route_zones(&self, a: RouteId, b: RouteId) -> &[RouteZone] {
        &self.route_zones[a.0 * self.routes.len() + b.0]
    }

    pub fn routes_conflict(&self, a: RouteId, b: RouteId) -> bool {
        !self.route_zones(a, b).is_empty()
    }

    /// Static right of way of route `a` over route `b`; antisymmetric for
    /// distinct routes.
    pub fn has_right_of_way(&self, a: RouteId, b: RouteId) -> bool {
        let (ra, rb) = (self.route(a), self.route(b));
        match ra.rank.cmp(&rb.rank) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => ra.id < rb.id,
        }
    }

    pub fn route_pose(&self, route: RouteId, s: f64) -> Pose {
        let r = self.route(route);
        let s = s.clamp(0.0, r.length);
        let slot = r.lane_slot_at(s);
        let lane = &self.lanes[r.lane_indices[slot]];
        lane.centerline.pose_at(s - r.offsets[slot])
    }

    /// Lane index and lane-local arc length at route position `s`.
    pub fn route_lane_at(&self, route: RouteId, s: f64) -> (usize, f64) {
        let r = self.route(route);
        let s = s.clamp(0.0, r.length);
        let slot = r.lane_slot_at(s);
        (r.lane_indices[slot], s - r.offsets[slot])
    }

    pub fn speed_limit_at(&self, route: RouteId, s: f64) -> f64 {
        let (lane, _) = self.route_lane_at(route, s);
        self.lanes[lane].speed_limit
    }

    /// Nearest route arc length to a point.
    pub fn project_on_route(&self, route: RouteId, p: Vec2) -> f64 {
        let r = self.route(route);
        let mut best = (f64::INFINITY, 0.0);
        for (slot, &lane) in r.lane_indices.iter().enumerate() {
            let proj = self.lanes[lane].centerline.project(p);
            if proj.distance < best.0 {
                best = (proj.distance, r.offsets[slot] + proj.s);
            }
        }
        best.1
    }

    fn predecessors(&self, lane: usize) -> Vec<usize> {
        let id = &self.lanes[lane].id;
        (0..self.lanes.len())
            .filter(|&i| self.lanes[i].successors.iter().any(|s| s == id))
            .collect()
    }

    fn successor_indices(&self, lane: usize) -> Vec<usize> {
        self.lanes[lane]
            .successors
            .iter()
            .filter_map(|s| self.lane_index(s))
            .collect()
    }

    fn enumerate_routes(&self) -> Vec<Route> {
        let mut paths = Vec::new();
        for start in 0..self.lanes.len() {
            if !self.predecessors(start).is_empty() {
                continue;
            }
            let mut stack = vec![vec![start]];
            while let Some(path) = stack.pop() {
                let last = *path.last().expect("non-empty path");
                let succ = self.successor_indices(last);
                if succ.is_empty() {
                    paths.push(path);
                    continue;
                }
                for s in succ.into_iter().rev() {
                    if path.contains(&s) {
                        continue;
                    }
                    let mut next = path.clone();
                    next.push(s);
                    stack.push(next);
                }
            }
        }
        let mut routes: Vec<Route> = paths
            .into_iter()
            .filter(|p| self.lanes[p[0]].arm != self.lanes[*p.last().unwrap()].arm)
            .map(|p| self.make_route(p))
            .collect();
        routes.sort_by(|a, b| {
            (a.source_arm, a.target_arm, &a.lanes).cmp(&(b.source_arm, b.target_arm, &b.lanes))
        });
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for r in &mut routes {
            let n = seen.entry(r.id.clone()).or_insert(0);
            *n += 1;
            if *n > 1 {
                r.id = format!("{}#{}", r.id, n);
            }
        }
        routes
    }

    fn make_route(&self, path: Vec<usize>) -> Route {
        let mut offsets = Vec::with_capacity(path.len());
        let mut acc = 0.0;
        for &l in &path {
            offsets.push(acc);
            acc += self.lanes[l].length();
        }
        let first = &self.lanes[path[0]];
        let last = &self.lanes[*path.last().unwrap()];
        let inner = if path.len() >= 3 {
            &path[1..path.len() - 1]
        } else {
            &path[..]
        };
        let rank = inner
            .iter()
            .map(|&l| self.lanes[l].priority_rank)
            .min()
            .unwrap_or(0);
        let h0 = first.centerline.pose_at(0.0).heading;
        let h1 = last.centerline.pose_at(last.length()).heading;
        Route {
            id: format!("{}-{}", first.arm.letter(), last.arm.letter()),
            lanes: path.iter().map(|&l| self.lanes[l].id.clone()).collect(),
            source_arm: first.arm,
            target_arm: last.arm,
            lane_indices: path,
            offsets,
            length: acc,
            rank,
            turn_angle: crate::geometry::normalize_angle(h1 - h0).abs(),
        }
    }

    fn build_route_zones(&self) -> Vec<Vec<RouteZone>> {
        let n = self.routes.len();
        let mut table = vec![Vec::new(); n * n];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let ra = &self.routes[a];
                let rb = &self.routes[b];
                let mut out = Vec::new();
                for (zi, z) in self.zones.iter().enumerate() {
                    let la = self.index[&z.lane_a];
                    let lb = self.index[&z.lane_b];
                    if let (Some(oa), Some(ob)) = (ra.offset_of(la), rb.offset_of(lb)) {
                        out.push(RouteZone {
                            zone: zi,
                            entry_a: oa + z.entry_a,
                            exit_a: oa + z.exit_a,
                            entry_b: ob + z.entry_b,
                            exit_b: ob + z.exit_b,
                            kind: z.kind,
                            a_on_lane_a: true,
                        });
                    }
                    if let (Some(oa), Some(ob)) = (ra.offset_of(lb), rb.offset_of(la)) {
                        out.push(RouteZone {
                            zone: zi,
                            entry_a: oa + z.entry_b,
                            exit_a: oa + z.exit_b,
                            entry_b: ob + z.entry_a,
                            exit_b: ob + z.exit_a,
                            kind: z.kind,
                            a_on_lane_a: false,
                        });
                    }
                }
                out.sort_by(|x, y| x.entry_a.total_cmp(&y.entry_a));
                table[a * n + b] = out;
            }
        }
        table
    }
}

fn validate_lane(lane: &Lane) -> Result<(), MapError> {
    let pts = lane.centerline.points();
    let finite = pts.iter().all(|p| p.x.is_finite() && p.y.is_finite());
    let distinct = pts.windows(2).all(|w| w[0] != w[1]);
    if pts.len() < 2 || !finite || !distinct || lane.length() <= 0.0 {
        return Err(MapError::DegenerateCenterline(lane.id.clone()));
    }
    if !(lane.speed_limit > 0.0 && lane.speed_limit.is_finite()) {
        return Err(MapError::InvalidSpeedLimit {
            lane: lane.id.clone(),
            limit: lane.speed_limit,
        });
    }
    Ok(())
}

/// Conflict zones of all lane pairs whose corridors overlap, excluding
/// consecutive lanes and lanes diverging from a common predecessor.
pub fn extract_conflict_zones(map: &LaneMap) -> Vec<ConflictZone> {
    let n = map.lanes.len();
    let preds: Vec<Vec<usize>> = (0..n).map(|i| map.predecessors(i)).collect();
    let succs: Vec<Vec<usize>> = (0..n).map(|i| map.successor_indices(i)).collect();
    let mut zones = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if succs[a].contains(&b) || succs[b].contains(&a) {
                continue;
            }
            if preds[a].iter().any(|p| preds[b].contains(p)) {
                continue;
            }
            let kind = if succs[a].iter().any(|s| succs[b].contains(s)) {
                ZoneKind::Merging
            } else {
                ZoneKind::Crossing
            };
            zones.extend(lane_pair_zones(&map.lanes[a], &map.lanes[b], kind));
        }
    }
    zones
}

fn boxes_overlap(a: &Polyline, b: &Polyline, margin: f64) -> bool {
    let (alo, ahi) = a.bounding_box();
    let (blo, bhi) = b.bounding_box();
    alo.x - margin <= bhi.x && blo.x - margin <= ahi.x && alo.y - margin <= bhi.y && blo.y - margin <= ahi.y
}

/// Whether the corridor cross-section of `lane` at `s` touches the corridor
/// of `other` restricted to `[from, to]`.
fn section_overlaps(lane: &Polyline, s: f64, other: &Polyline, from: f64, to: f64) -> bool {
    let pose = lane.pose_at(s);
    let n = Vec2::from_angle(pose.heading + FRAC_PI_2) * CORRIDOR_HALF_WIDTH;
    other.distance_to_segment(pose.position - n, pose.position + n, from, to) <= CORRIDOR_HALF_WIDTH
}

fn overlap_intervals(lane: &Polyline, other: &Polyline) -> Vec<(f64, f64)> {
    let len = lane.length();
    let other_len = other.length();
    let inside = |s: f64| section_overlaps(lane, s, other, 0.0, other_len);
    let refine = |mut lo: f64, mut hi: f64, lo_inside: bool| {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if inside(mid) == lo_inside {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo_inside {
            lo
        } else {
            hi
        }
    };
    let steps = (len / ZONE_SAMPLE_STEP).ceil() as usize;
    let mut intervals = Vec::new();
    let mut start: Option<f64> = None;
    let mut prev_s = 0.0;
    let mut prev_in = false;
    for k in 0..=steps {
        let s = (k as f64 * ZONE_SAMPLE_STEP).min(len);
        let now_in = inside(s);
        if k == 0 {
            if now_in {
                start = Some(0.0);
            }
        } else if now_in && !prev_in {
            start = Some(refine(prev_s, s, false));
        } else if !now_in && prev_in {
            let end = refine(prev_s, s, true);
            intervals.push((start.take().expect("open interval"), end));
        }
        prev_s = s;
        prev_in = now_in;
    }
    if let Some(st) = start {
        intervals.push((st, len));
    }
    intervals.retain(|(a, b)| b > a);
    intervals
}

fn lane_pair_zones(a: &Lane, b: &Lane, kind: ZoneKind) -> Vec<ConflictZone> {
    if !boxes_overlap(&a.centerline, &b.centerline, 4.0 * CORRIDOR_HALF_WIDTH) {
        return Vec::new();
    }
    let on_a = overlap_intervals(&a.centerline, &b.centerline);
    if on_a.is_empty() {
        return Vec::new();
    }
    let on_b = overlap_intervals(&b.centerline, &a.centerline);
    let mut zones = Vec::new();
    for &(ea, xa) in &on_a {
        for &(eb, xb) in &on_b {
            let samples = ((xa - ea) / ZONE_SAMPLE_STEP).ceil().max(1.0) as usize;
            let linked = (0..=samples).any(|k| {
                let s = (ea + k as f64 * ZONE_SAMPLE_STEP).min(xa);
                section_overlaps(&a.centerline, s, &b.centerline, eb, xb)
            });
            if linked {
                zones.push(ConflictZone {
                    lane_a: a.id.clone(),
                    lane_b: b.id.clone(),
                    entry_a: ea,
                    exit_a: xa,
                    entry_b: eb,
                    exit_b: xb,
                    kind,
                });
            }
        }
    }
    zones
}

/// Zones between the lanes of two routes, in lane coordinates of `a`'s lane,
/// ordered along route `a`.
pub fn route_conflicts(map: &LaneMap, a: RouteId, b: RouteId) -> Vec<ConflictZone> {
    if a == b {
        return Vec::new();
    }
    map.route_zones(a, b)
        .iter()
        .map(|rz| {
            let z = &map.zones[rz.zone];
            if rz.a_on_lane_a {
                z.clone()
            } else {
                z.swapped()
            }
        })
        .collect()
}

/// Junction geometry: half-width of the junction box.
pub const JUNCTION_HALF_WIDTH: f64 = 12.0;
/// Lateral offset of each lane centerline from the road axis.
pub const LANE_OFFSET: f64 = 2.0;
/// Length of straight approach and exit segments.
pub const ARM_LENGTH: f64 = 120.0;
pub const MAJOR_SPEED_LIMIT: f64 = 11.11;
pub const NORTH_SPEED_LIMIT: f64 = 8.33;

const ARC_SEGMENTS: usize = 24;

fn arc(center: Vec2, radius: f64, from: f64, to: f64) -> Vec<Vec2> {
    (0..=ARC_SEGMENTS)
        .map(|k| {
            let t = from + (to - from) * k as f64 / ARC_SEGMENTS as f64;
            center + Vec2::from_angle(t) * radius
        })
        .collect()
}

/// The three-arm junction used throughout the experiments.
///
/// The major road bends from the north arm to the east arm; the west arm is the
/// minor road. Traffic keeps right. Turning connectors are circular arcs
/// centred on the corners of the junction box.
pub fn build_lehr_junction() -> LaneMap {
    let j = JUNCTION_HALF_WIDTH;
    let d = LANE_OFFSET;
    let far = j + ARM_LENGTH;
    let v_ew = MAJOR_SPEED_LIMIT;
    let v_n = NORTH_SPEED_LIMIT;
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    use std::f64::consts::PI;
    let ne = Vec2::new(j, j);
    let nw = Vec2::new(-j, j);
    let lanes = vec![
        Lane::new("N_in", Arm::North, v_n, 0, vec![Vec2::new(-d, far), Vec2::new(-d, j)], s(&["N_E", "N_W"])),
        Lane::new("N_out", Arm::North, v_n, 0, vec![Vec2::new(d, j), Vec2::new(d, far)], vec![]),
        Lane::new("E_in", Arm::East, v_ew, 0, vec![Vec2::new(far, d), Vec2::new(j, d)], s(&["E_N", "E_W"])),
        Lane::new("E_out", Arm::East, v_ew, 0, vec![Vec2::new(j, -d), Vec2::new(far, -d)], vec![]),
        Lane::new("W_in", Arm::West, v_ew, 2, vec![Vec2::new(-far, -d), Vec2::new(-j, -d)], s(&["W_N", "W_E"])),
        Lane::new("W_out", Arm::West, v_ew, 2, vec![Vec2::new(-j, d), Vec2::new(-far, d)], vec![]),
        // southbound left turn following the major road
        Lane::new("N_E", Arm::North, v_n, 0, arc(ne, j + d, PI, 1.5 * PI), s(&["E_out"])),
        Lane::new("N_W", Arm::North, v_n, 0, arc(nw, j - d, 0.0, -0.5 * PI), s(&["W_out"])),
        Lane::new("E_N", Arm::East, v_n, 0, arc(ne, j - d, 1.5 * PI, PI), s(&["N_out"])),
        Lane::new("E_W", Arm::East, v_ew, 1, vec![Vec2::new(j, d), Vec2::new(-j, d)], s(&["W_out"])),
        Lane::new("W_N", Arm::West, v_n, 2, arc(nw, j + d, 1.5 * PI, 2.0 * PI), s(&["N_out"])),
        Lane::new("W_E", Arm::West, v_ew, 2, vec![Vec2::new(-j, -d), Vec2::new(j, -d)], s(&["E_out"])),
    ];
    LaneMap::new(lanes).expect("built-in junction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(id: &str, a: Vec2, b: Vec2) -> Lane {
        Lane::new(id, Arm::West, 10.0, 0, vec![a, b], vec![])
    }

    #[test]
    fn parallel_lanes_have_no_zone() {
        let map = LaneMap::new(vec![
            straight("a", Vec2::new(0.0, 0.0), Vec2::new(50.0, 0.0)),
            straight("b", Vec2::new(0.0, 10.0), Vec2::new(50.0, 10.0)),
        ])
        .unwrap();
        assert!(map.zones().is_empty());
    }

    #[test]
    fn perpendicular_crossing_extent_matches_corridor_width() {
        let map = LaneMap::new(vec![
            straight("a", Vec2::new(-20.0, 0.0), Vec2::new(20.0, 0.0)),
            straight("b", Vec2::new(0.0, -20.0), Vec2::new(0.0, 20.0)),
        ])
        .unwrap();
        assert_eq!(map.zones().len(), 1);
        let z = &map.zones()[0];
        assert_eq!(z.kind, ZoneKind::Crossing);
        // rectangle overlap of two 3 m corridors: [18.5, 21.5] on both lanes
        assert!((z.entry_a - 18.5).abs() < 1e-6, "{z:?}");
        assert!((z.exit_a - 21.5).abs() < 1e-6);
        assert!((z.entry_b - 18.5).abs() < 1e-6);
        assert!((z.exit_b - 21.5).abs() < 1e-6);
    }

    #[test]
    fn dangling_successor_is_rejected() {
        let mut a = straight("L1", Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        a.successors.push("L99".into());
        match LaneMap::new(vec![a]) {
            Err(MapError::DanglingReference { successor, .. }) => assert_eq!(successor, "L99"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_centerline_is_rejected() {
        let a = Lane::new("L1", Arm::West, 10.0, 0, vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)], vec![]);
        assert!(matches!(LaneMap::new(vec![a]), Err(MapError::DegenerateCenterline(_))));
        let b = Lane::new("L2", Arm::West, 10.0, 0, vec![Vec2::new(1.0, 1.0)], vec![]);
        assert!(matches!(LaneMap::new(vec![b]), Err(MapError::DegenerateCenterline(_))));
    }

    #[test]
    fn nonpositive_speed_limit_is_rejected() {
        let a = Lane::new("L1", Arm::West, 0.0, 0, vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], vec![]);
        assert!(matches!(LaneMap::new(vec![a]), Err(MapError::InvalidSpeedLimit { .. })));
    }

    #[test]
    fn pose_at_endpoints_and_midpoint() {
        let lane = straight("a", Vec2::new(0.0, 0.0), Vec2::new(10.0, 4.0));
        let p0 = pose_at(&lane, 0.0).unwrap();
        assert_eq!(p0.position, Vec2::new(0.0, 0.0));
        assert!((p0.heading - (4.0f64).atan2(10.0)).abs() < 1e-12);
        let p1 = pose_at(&lane, lane.length()).unwrap();
        assert!(p1.position.distance(Vec2::new(10.0, 4.0)) < 1e-12);
        let pm = pose_at(&lane, lane.length() / 2.0).unwrap();
        assert!(pm.position.distance(Vec2::new(5.0, 2.0)) < 1e-12);
        assert!(pose_at(&lane, -0.1).is_err());
        assert!(pose_at(&lane, lane.length() + 0.1).is_err());
    }

    #[test]
    fn lehr_junction_speed_limits_and_routes() {
        let map = build_lehr_junction();
        assert_eq!(map.lane_by_id("E_in").unwrap().speed_limit, 11.11);
        assert_eq!(map.lane_by_id("N_in").unwrap().speed_limit, 8.33);
        assert_eq!(map.routes().len(), 6);
        let wn = map.find_route(Arm::West, Arm::North).unwrap();
        let ew = map.find_route(Arm::East, Arm::West).unwrap();
        let ws: Vec<_> = route_conflicts(&map, wn, ew);
        assert!(ws.iter().any(|z| z.kind == ZoneKind::Crossing));
    }

    #[test]
    fn route_conflicts_with_itself_is_empty() {
        let map = build_lehr_junction();
        for r in map.route_ids() {
            assert!(route_conflicts(&map, r, r).is_empty());
        }
    }
}
