//! Server-side environment model: vehicle states, lane matching, route
//! estimates for human drivers and the observation features consumed by the
//! driver model.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Pose};
use crate::map::{LaneMap, RouteId};

/// Lateral distance within which a pose is matched to a lane centerline.
pub const LATERAL_MATCH_TOLERANCE: f64 = 2.0;
/// Maximum heading difference between vehicle and lane for a match.
pub const MAX_MATCH_ANGLE: f64 = 30.0 * std::f64::consts::PI / 180.0;
/// Lead vehicles farther than this are reported with the sentinel.
pub const LEAD_RANGE: f64 = 100.0;
/// Comfortable deceleration defining the point of guaranteed arrival.
pub const COMFORT_DECEL: f64 = 3.0;
pub const VEHICLE_LENGTH: f64 = 5.0;
/// Route offsets (m) at which relative lane headings are sampled.
pub const HEADING_OFFSETS: [f64; 6] = [-10.0, -3.0, 3.0, 10.0, 30.0, 100.0];

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("vehicle {0} appears more than once")]
    DuplicateVehicle(VehicleId),
    #[error("vehicle {0} could not be matched to any lane")]
    Unmatched(VehicleId),
    #[error("controllable vehicle {0} has no route")]
    MissingRoute(VehicleId),
    #[error("timestamp {next} precedes {current}")]
    NonMonotoneTimestamp { current: f64, next: f64 },
    #[error("vehicles {0} and {1} do not conflict")]
    NotConflicting(VehicleId, VehicleId),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePosition {
    pub lane: usize,
    pub s: f64,
}

/// One vehicle of the environment model. HDVs carry no route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub pose: Pose,
    pub speed: f64,
    pub route: Option<RouteId>,
    pub controllable: bool,
    pub lane_position: Option<LanePosition>,
    pub accel: f64,
    /// HDV routes still consistent with earlier snapshots; carried forward by
    /// [`EnvironmentModel::update`].
    #[serde(default)]
    pub route_history: Option<BTreeSet<RouteId>>,
}

impl VehicleState {
    /// A vehicle placed on a route; the route is kept only for CAVs.
    pub fn on_route(
        map: &LaneMap,
        id: VehicleId,
        route: RouteId,
        s: f64,
        speed: f64,
        controllable: bool,
    ) -> Self {
        let (lane, s_lane) = map.route_lane_at(route, s);
        Self {
            id,
            pose: map.route_pose(route, s),
            speed: speed.max(0.0),
            route: controllable.then_some(route),
            controllable,
            lane_position: Some(LanePosition { lane, s: s_lane }),
            accel: 0.0,
            route_history: None,
        }
    }

    /// Arc length of the vehicle on `route`, if its matched lane lies on it.
    pub fn position_on(&self, map: &LaneMap, route: RouteId) -> Option<f64> {
        let lp = self.lane_position?;
        map.route(route).offset_of(lp.lane).map(|o| o + lp.s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvironmentModel {
    pub timestamp: f64,
    vehicles: Vec<VehicleState>,
}

impl EnvironmentModel {
    pub fn new(timestamp: f64, mut vehicles: Vec<VehicleState>) -> Result<Self, EnvError> {
        vehicles.sort_by_key(|v| v.id);
        for w in vehicles.windows(2) {
            if w[0].id == w[1].id {
                return Err(EnvError::DuplicateVehicle(w[0].id));
            }
        }
        for v in &vehicles {
            if v.controllable && v.route.is_none() {
                return Err(EnvError::MissingRoute(v.id));
            }
        }
        Ok(Self {
            timestamp,
            vehicles,
        })
    }

    pub fn empty(timestamp: f64) -> Self {
        Self {
            timestamp,
            vehicles: Vec::new(),
        }
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| &self.vehicles[i])
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Replaces this snapshot by a later one. Human drivers keep only the
    /// routes that were also consistent with the previous snapshot, so their
    /// worst-case route sets shrink as they advance.
    pub fn update(&mut self, mut next: EnvironmentModel, map: &LaneMap) -> Result<(), EnvError> {
        if next.timestamp < self.timestamp {
            return Err(EnvError::NonMonotoneTimestamp {
                current: self.timestamp,
                next: next.timestamp,
            });
        }
        for v in next.vehicles.iter_mut().filter(|v| v.route.is_none()) {
            if let Some(prev) = self.get(v.id) {
                if let Ok(routes) = worst_case_routes(prev, map) {
                    v.route_history = Some(routes);
                }
            }
        }
        *self = next;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneMatch {
    pub lane: usize,
    pub s: f64,
    pub lateral: f64,
    pub angular_error: f64,
}

/// All lanes within the lateral tolerance whose heading differs from the pose
/// by at most 30 degrees, nearest first.
pub fn match_lanes(pose: &Pose, map: &LaneMap) -> Vec<LaneMatch> {
    let mut out: Vec<LaneMatch> = map
        .lanes()
        .iter()
        .enumerate()
        .filter_map(|(i, lane)| {
            let p = lane.centerline().project(pose.position);
            let err = normalize_angle(pose.heading - p.heading).abs();
            (p.distance <= LATERAL_MATCH_TOLERANCE && err <= MAX_MATCH_ANGLE).then_some(LaneMatch {
                lane: i,
                s: p.s,
                lateral: p.distance,
                angular_error: err,
            })
        })
        .collect();
    out.sort_by(|a, b| a.lateral.total_cmp(&b.lateral).then(a.lane.cmp(&b.lane)));
    out
}

/// Candidate routes with the vehicle's arc length on each.
///
/// CAVs report their declared route. For HDVs every route through a matched
/// lane is kept, narrowed by the route history when there is one.
pub fn route_positions(vehicle: &VehicleState, map: &LaneMap) -> Result<Vec<(RouteId, f64)>, EnvError> {
    if let Some(route) = vehicle.route {
        let s = vehicle
            .position_on(map, route)
            .unwrap_or_else(|| map.project_on_route(route, vehicle.pose.position));
        return Ok(vec![(route, s)]);
    }
    let matches = match_lanes(&vehicle.pose, map);
    let mut lanes: Vec<(usize, f64)> = matches.iter().map(|m| (m.lane, m.s)).collect();
    if let Some(lp) = vehicle.lane_position {
        if !lanes.iter().any(|(l, _)| *l == lp.lane) {
            lanes.insert(0, (lp.lane, lp.s));
        }
    }
    if lanes.is_empty() {
        return Err(EnvError::Unmatched(vehicle.id));
    }
    let mut out: Vec<(RouteId, f64)> = Vec::new();
    for (lane, s) in lanes {
        for r in map.routes_through(lane) {
            if out.iter().any(|(x, _)| *x == r) {
                continue;
            }
            let offset = map.route(r).offset_of(lane).expect("route contains lane");
            out.push((r, offset + s));
        }
    }
    out.sort_by_key(|(r, _)| *r);
    if let Some(history) = &vehicle.route_history {
        // an empty intersection means the history no longer fits the pose
        if out.iter().any(|(r, _)| history.contains(r)) {
            out.retain(|(r, _)| history.contains(r));
        }
    }
    Ok(out)
}

/// Declared route for CAVs; all routes consistent with the lane matches for
/// HDVs.
pub fn worst_case_routes(vehicle: &VehicleState, map: &LaneMap) -> Result<BTreeSet<RouteId>, EnvError> {
    Ok(route_positions(vehicle, map)?.into_iter().map(|(r, _)| r).collect())
}

/// Worst-case route of `vehicle` conflicting with the most other vehicles'
/// candidate routes. Ties prefer the straightest route, then the higher
/// ranked one.
pub fn most_conflicting_route(
    vehicle: &VehicleState,
    em: &EnvironmentModel,
    map: &LaneMap,
) -> Result<(RouteId, f64), EnvError> {
    let candidates = route_positions(vehicle, map)?;
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let others: Vec<Vec<RouteId>> = em
        .vehicles()
        .iter()
        .filter(|o| o.id != vehicle.id)
        .filter_map(|o| route_positions(o, map).ok())
        .map(|v| v.into_iter().map(|(r, _)| r).collect())
        .collect();
    let score = |r: RouteId| {
        others
            .iter()
            .filter(|set| set.iter().any(|&o| map.routes_conflict(r, o)))
            .count()
    };
    let best = candidates
        .iter()
        .copied()
        .min_by(|a, b| {
            let ra = map.route(a.0);
            let rb = map.route(b.0);
            score(b.0)
                .cmp(&score(a.0))
                .then(ra.turn_angle().total_cmp(&rb.turn_angle()))
                .then(ra.priority_rank().cmp(&rb.priority_rank()))
                .then(a.0.cmp(&b.0))
        })
        .expect("non-empty candidates");
    Ok(best)
}

/// Driver-model environment features of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation {
    /// Signed distance to the stop line; negative once past it.
    pub d_stop: f64,
    pub v: f64,
    pub v_max: f64,
    pub delta_psi: [f64; 6],
    /// Front-to-front distance to the lead vehicle, or [`LEAD_RANGE`].
    pub d_lead: f64,
    pub v_lead: f64,
}

impl EnvObservation {
    pub const DIM: usize = 11;

    pub fn features(&self) -> [f64; Self::DIM] {
        let p = &self.delta_psi;
        [
            self.d_stop, self.v, self.v_max, p[0], p[1], p[2], p[3], p[4], p[5], self.d_lead, self.v_lead,
        ]
    }
}

/// Observation of a vehicle at `s` on `route` with an optional lead given as
/// (front-to-front distance, speed).
pub fn observation_on_route(
    map: &LaneMap,
    route: RouteId,
    s: f64,
    v: f64,
    lead: Option<(f64, f64)>,
) -> EnvObservation {
    let r = map.route(route);
    let heading = map.route_pose(route, s).heading;
    let mut delta_psi = [0.0; 6];
    for (out, off) in delta_psi.iter_mut().zip(HEADING_OFFSETS) {
        let h = map.route_pose(route, (s + off).clamp(0.0, r.length())).heading;
        *out = normalize_angle(h - heading);
    }
    let v_max = map.speed_limit_at(route, s);
    let (d_lead, v_lead) = match lead {
        Some((d, vl)) if d <= LEAD_RANGE => (d.max(0.0), vl),
        _ => (LEAD_RANGE, v_max),
    };
    EnvObservation {
        d_stop: r.entry_s() - s,
        v,
        v_max,
        delta_psi,
        d_lead,
        v_lead,
    }
}

fn own_route(vehicle: &VehicleState, em: &EnvironmentModel, map: &LaneMap) -> Result<(RouteId, f64), EnvError> {
    match vehicle.route {
        Some(_) => Ok(route_positions(vehicle, map)?[0]),
        None => most_conflicting_route(vehicle, em, map),
    }
}

/// Environment observation of `vehicle`. HDVs are observed along their most
/// conflicting worst-case route.
pub fn observe_env(vehicle: &VehicleState, em: &EnvironmentModel, map: &LaneMap) -> Result<EnvObservation, EnvError> {
    let (route, s) = own_route(vehicle, em, map)?;
    let lead = em
        .vehicles()
        .iter()
        .filter(|o| o.id != vehicle.id)
        .filter_map(|o| o.position_on(map, route).map(|p| (p - s, o.speed)))
        .filter(|(d, _)| *d > 0.0)
        .min_by(|a, b| a.0.total_cmp(&b.0));
    Ok(observation_on_route(map, route, s, vehicle.speed, lead))
}

/// Gap-acceptance features of `vi` towards a conflicting `vj`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapObservation {
    pub d_pga: f64,
    pub v_i: f64,
    pub d_stop_j: f64,
    pub v_j: f64,
}

impl GapObservation {
    pub const DIM: usize = 4;

    pub fn features(&self) -> [f64; Self::DIM] {
        [self.d_pga, self.v_i, self.d_stop_j, self.v_j]
    }
}

/// Distance to the point beyond which the vehicle can no longer stop at the
/// comfortable deceleration; zero once past it.
pub fn distance_to_pga(d_stop: f64, v: f64) -> f64 {
    (d_stop - v * v / (2.0 * COMFORT_DECEL)).max(0.0)
}

pub fn observe_gap(vi: &VehicleState, vj: &VehicleState, map: &LaneMap) -> Result<GapObservation, EnvError> {
    let ri = route_positions(vi, map)?;
    let rj = route_positions(vj, map)?;
    let pair = ri
        .iter()
        .flat_map(|a| rj.iter().map(move |b| (*a, *b)))
        .find(|(a, b)| map.routes_conflict(a.0, b.0))
        .ok_or(EnvError::NotConflicting(vi.id, vj.id))?;
    let ((route_i, s_i), (route_j, s_j)) = pair;
    let d_stop_i = map.route(route_i).entry_s() - s_i;
    Ok(GapObservation {
        d_pga: distance_to_pga(d_stop_i, vi.speed),
        v_i: vi.speed,
        d_stop_j: map.route(route_j).entry_s() - s_j,
        v_j: vj.speed,
    })
}
