//! Joint forward prediction of a traffic scene, validity checks and the
//! efficiency score used to compare priority assignments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::DriverModel;
use crate::environment::{most_conflicting_route, route_positions, EnvError, EnvironmentModel, VehicleId, VEHICLE_LENGTH};
use crate::joint::{Agent, JointConfig, JointModel};
use crate::map::{LaneMap, RouteId};

/// Minimum bumper-to-bumper gap between vehicles on the same lane.
pub const MIN_SAME_LANE_GAP: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("both orderings of ({0}, {1}) are assigned")]
    InconsistentAssignment(VehicleId, VehicleId),
    #[error("a vehicle cannot be prioritized over itself ({0})")]
    SelfAssignment(VehicleId),
}

/// Ordered pairs ⟨i, j⟩ giving `i` precedence over `j`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PriorityAssignmentSet {
    pairs: BTreeSet<(VehicleId, VehicleId)>,
}

impl PriorityAssignmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (VehicleId, VehicleId)>) -> Result<Self, PredictionError> {
        let mut out = Self::new();
        for (i, j) in pairs {
            out.insert(i, j)?;
        }
        Ok(out)
    }

    pub fn insert(&mut self, i: VehicleId, j: VehicleId) -> Result<(), PredictionError> {
        if i == j {
            return Err(PredictionError::SelfAssignment(i));
        }
        if self.pairs.contains(&(j, i)) {
            return Err(PredictionError::InconsistentAssignment(i, j));
        }
        self.pairs.insert((i, j));
        Ok(())
    }

    pub fn contains(&self, i: VehicleId, j: VehicleId) -> bool {
        self.pairs.contains(&(i, j))
    }

    /// Whether the unordered pair is ordered either way.
    pub fn orders(&self, a: VehicleId, b: VehicleId) -> bool {
        self.contains(a, b) || self.contains(b, a)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VehicleId, VehicleId)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(VehicleId, VehicleId) -> bool) {
        self.pairs.retain(|&(i, j)| keep(i, j));
    }

    /// Pairs sorted lexicographically by their unordered key; used for tie
    /// breaking between equally efficient candidates.
    pub fn sort_key(&self) -> Vec<(VehicleId, VehicleId)> {
        self.pairs.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub horizon: f64,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Predict human drivers creeping towards occluded yield points.
    pub occlusion: bool,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            horizon: 15.0,
            dt: 0.1,
            t_start: 0.0,
            t_end: 15.0,
            occlusion: true,
        }
    }
}

impl PredictionConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSeries {
    pub id: VehicleId,
    pub is_cav: bool,
    pub route: RouteId,
    pub s: Vec<f64>,
    pub lane: Vec<usize>,
    /// Arc length within `lane`.
    pub lane_s: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
    pub delta: Vec<u8>,
    pub departed: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// Index into the map's conflict zones.
    pub zone: usize,
    pub vehicle: VehicleId,
    pub lane: usize,
    pub t_enter: f64,
    /// `None` while still inside at the end of the horizon.
    pub t_leave: Option<f64>,
}

impl Occupancy {
    pub fn leave_or_inf(&self) -> f64 {
        self.t_leave.unwrap_or(f64::INFINITY)
    }

    pub fn overlaps(&self, other: &Occupancy) -> bool {
        self.t_enter < other.leave_or_inf() && other.t_enter < self.leave_or_inf()
    }
}

/// Zone interval on a vehicle's route that it had not cleared at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingZone {
    pub zone: usize,
    pub vehicle: VehicleId,
    pub lane: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub dt: f64,
    pub times: Vec<f64>,
    pub vehicles: Vec<VehicleSeries>,
    pub occupancy: Vec<Occupancy>,
    pub pending: Vec<PendingZone>,
    pub collision: bool,
    pub order_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InvalidReason {
    Collision { zone: usize, a: VehicleId, b: VehicleId },
    SameLaneGap { a: VehicleId, b: VehicleId, t: f64 },
    OrderViolation { first: VehicleId, second: VehicleId, zone: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub valid: bool,
    pub reasons: Vec<InvalidReason>,
}

/// Agents for an environment model: CAVs on their declared route, HDVs on
/// their most conflicting worst-case route.
pub fn agents_from_em(em: &EnvironmentModel, map: &LaneMap) -> Result<Vec<Agent>, EnvError> {
    em.vehicles()
        .iter()
        .map(|v| {
            let (route, s) = if v.route.is_some() {
                route_positions(v, map)?[0]
            } else {
                most_conflicting_route(v, em, map)?
            };
            Ok(Agent {
                id: v.id,
                is_cav: v.controllable,
                route,
                s,
                v: v.speed,
                a: v.accel,
                departed: s >= map.route(route).length(),
            })
        })
        .collect()
}

pub fn predict(
    em: &EnvironmentModel,
    p: &PriorityAssignmentSet,
    cfg: &PredictionConfig,
    map: &LaneMap,
    model: &DriverModel,
) -> Result<PredictionTrace, PredictionError> {
    let agents = agents_from_em(em, map)?;
    let jm = JointModel::new(
        map,
        JointConfig {
            cooperative: true,
            occlusion: cfg.occlusion,
            model: model.clone(),
        },
    );
    Ok(predict_agents(&jm, agents, p, cfg))
}

/// Collects joint states step by step and turns them into a trace.
pub struct TraceRecorder {
    dt: f64,
    times: Vec<f64>,
    series: Vec<VehicleSeries>,
}

impl TraceRecorder {
    pub fn new(agents: &[Agent], dt: f64, capacity: usize) -> Self {
        let series = agents
            .iter()
            .map(|a| VehicleSeries {
                id: a.id,
                is_cav: a.is_cav,
                route: a.route,
                s: Vec::with_capacity(capacity),
                lane: Vec::with_capacity(capacity),
                lane_s: Vec::with_capacity(capacity),
                v: Vec::with_capacity(capacity),
                v_max: Vec::with_capacity(capacity),
                delta: Vec::with_capacity(capacity),
                departed: Vec::with_capacity(capacity),
            })
            .collect();
        Self {
            dt,
            times: Vec::with_capacity(capacity),
            series,
        }
    }

    pub fn record(&mut self, map: &LaneMap, t: f64, agents: &[Agent], deltas: &[u8]) {
        self.times.push(t);
        for ((ser, a), &d) in self.series.iter_mut().zip(agents).zip(deltas) {
            let (lane, lane_s) = map.route_lane_at(a.route, a.s);
            ser.s.push(a.s);
            ser.lane.push(lane);
            ser.lane_s.push(lane_s);
            ser.v.push(a.v);
            ser.v_max.push(map.speed_limit_at(a.route, a.s));
            ser.delta.push(d);
            ser.departed.push(a.departed);
        }
    }

    /// Final trace with zone occupancy and validity flags under `p`.
    pub fn finish(self, map: &LaneMap, p: &PriorityAssignmentSet) -> PredictionTrace {
        let mut trace = PredictionTrace {
            dt: self.dt,
            times: self.times,
            vehicles: self.series,
            occupancy: Vec::new(),
            pending: Vec::new(),
            collision: false,
            order_violation: false,
        };
        let (occ, pending) = zone_occupancy(&trace, map);
        trace.occupancy = occ;
        trace.pending = pending;
        let reasons = validate(&trace, p).reasons;
        trace.collision = reasons
            .iter()
            .any(|r| matches!(r, InvalidReason::Collision { .. } | InvalidReason::SameLaneGap { .. }));
        trace.order_violation = reasons.iter().any(|r| matches!(r, InvalidReason::OrderViolation { .. }));
        trace
    }
}

/// Prediction from an explicit agent list.
pub fn predict_agents(jm: &JointModel, mut agents: Vec<Agent>, p: &PriorityAssignmentSet, cfg: &PredictionConfig) -> PredictionTrace {
    let steps = cfg.steps();
    let mut rec = TraceRecorder::new(&agents, cfg.dt, steps + 1);
    let mut accels = vec![0.0; agents.len()];
    let mut deltas = vec![1u8; agents.len()];
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        for i in 0..agents.len() {
            let c = jm.command(&agents, i, p, &[], t);
            accels[i] = c.accel;
            deltas[i] = c.delta;
        }
        rec.record(jm.map, t, &agents, &deltas);
        if k < steps {
            jm.integrate(&mut agents, &accels, cfg.dt);
        }
    }
    rec.finish(jm.map, p)
}

/// First time the series reaches `x` (linear interpolation between samples).
pub fn crossing_time(times: &[f64], s: &[f64], x: f64) -> Option<f64> {
    if s[0] >= x {
        return Some(times[0]);
    }
    s.windows(2).enumerate().find(|(_, w)| w[1] >= x).map(|(k, w)| {
        let f = if w[1] > w[0] { (x - w[0]) / (w[1] - w[0]) } else { 0.0 };
        times[k] + f * (times[k + 1] - times[k])
    })
}

/// Occupancy intervals of every vehicle in every map zone on its route.
pub fn zone_occupancy(trace: &PredictionTrace, map: &LaneMap) -> (Vec<Occupancy>, Vec<PendingZone>) {
    let mut occ = Vec::new();
    let mut pending = Vec::new();
    for ser in &trace.vehicles {
        let route = map.route(ser.route);
        let rear: Vec<f64> = ser.s.iter().map(|s| s - VEHICLE_LENGTH).collect();
        for (zi, z) in map.zones().iter().enumerate() {
            for (lane_id, entry, exit) in [(&z.lane_a, z.entry_a, z.exit_a), (&z.lane_b, z.entry_b, z.exit_b)] {
                let lane = map.lane_index(lane_id).expect("zone lanes exist");
                let Some(offset) = route.offset_of(lane) else { continue };
                let (start, end) = (offset + entry, offset + exit);
                if rear[0] >= end {
                    continue;
                }
                pending.push(PendingZone {
                    zone: zi,
                    vehicle: ser.id,
                    lane,
                    start,
                    end,
                });
                if let Some(t_enter) = crossing_time(&trace.times, &ser.s, start) {
                    occ.push(Occupancy {
                        zone: zi,
                        vehicle: ser.id,
                        lane,
                        t_enter,
                        t_leave: crossing_time(&trace.times, &rear, end),
                    });
                }
            }
        }
    }
    (occ, pending)
}

pub fn validate(trace: &PredictionTrace, p: &PriorityAssignmentSet) -> Validation {
    let mut reasons = Vec::new();
    for (x, a) in trace.occupancy.iter().enumerate() {
        for b in &trace.occupancy[x + 1..] {
            if a.zone == b.zone && a.lane != b.lane && a.vehicle != b.vehicle && a.overlaps(b) {
                reasons.push(InvalidReason::Collision {
                    zone: a.zone,
                    a: a.vehicle.min(b.vehicle),
                    b: a.vehicle.max(b.vehicle),
                });
            }
        }
    }
    reasons.extend(same_lane_violations(trace));
    for (i, j) in p.iter() {
        for pi in trace.pending.iter().filter(|z| z.vehicle == i) {
            for pj in trace.pending.iter().filter(|z| z.vehicle == j && z.zone == pi.zone && z.lane != pi.lane) {
                let enter_j = trace
                    .occupancy
                    .iter()
                    .find(|o| o.vehicle == j && o.zone == pj.zone && o.lane == pj.lane)
                    .map(|o| o.t_enter);
                let leave_i = trace
                    .occupancy
                    .iter()
                    .find(|o| o.vehicle == i && o.zone == pi.zone && o.lane == pi.lane)
                    .map_or(f64::INFINITY, |o| o.leave_or_inf());
                if enter_j.is_some_and(|t| t < leave_i) {
                    reasons.push(InvalidReason::OrderViolation {
                        first: i,
                        second: j,
                        zone: pi.zone,
                    });
                }
            }
        }
    }
    Validation {
        valid: reasons.is_empty(),
        reasons,
    }
}

fn same_lane_violations(trace: &PredictionTrace) -> Vec<InvalidReason> {
    let mut out = Vec::new();
    let n = trace.vehicles.len();
    for x in 0..n {
        for y in x + 1..n {
            let (a, b) = (&trace.vehicles[x], &trace.vehicles[y]);
            for k in 0..trace.times.len() {
                if a.departed[k] || b.departed[k] || a.lane[k] != b.lane[k] {
                    continue;
                }
                if (a.lane_s[k] - b.lane_s[k]).abs() - VEHICLE_LENGTH < MIN_SAME_LANE_GAP {
                    out.push(InvalidReason::SameLaneGap {
                        a: a.id.min(b.id),
                        b: a.id.max(b.id),
                        t: trace.times[k],
                    });
                    break;
                }
            }
        }
    }
    out
}

/// Efficiency of a predicted scene: time-integrated relative speed minus one
/// second per priority assignment.
pub fn efficiency(trace: &PredictionTrace, p: &PriorityAssignmentSet, cfg: &PredictionConfig) -> f64 {
    let mut e = 0.0;
    for ser in &trace.vehicles {
        for (k, &t) in trace.times.iter().enumerate() {
            if t < cfg.t_start - 1e-9 || t >= cfg.t_end - 1e-9 {
                continue;
            }
            let ratio = if ser.departed[k] {
                1.0
            } else {
                (ser.v[k] / ser.v_max[k]).min(1.0)
            };
            e += ratio * trace.dt;
        }
    }
    e - p.len() as f64
}

/// Vehicles per zone sorted by entry time; vehicles that never enter are
/// omitted.
pub fn crossing_order(trace: &PredictionTrace) -> BTreeMap<usize, Vec<VehicleId>> {
    let mut per_zone: BTreeMap<usize, Vec<(f64, VehicleId)>> = BTreeMap::new();
    for o in &trace.occupancy {
        per_zone.entry(o.zone).or_default().push((o.t_enter, o.vehicle));
    }
    per_zone
        .into_iter()
        .map(|(z, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            (z, v.into_iter().map(|(_, id)| id).collect())
        })
        .collect()
}

/// Delimiter-separated dump: one row per vehicle per step.
pub fn dump_trace(trace: &PredictionTrace, map: &LaneMap) -> String {
    let mut out = String::from("t,id,lane,s,v,delta\n");
    for (k, t) in trace.times.iter().enumerate() {
        for ser in &trace.vehicles {
            let _ = writeln!(
                out,
                "{:.2},{},{},{:.3},{:.3},{}",
                t,
                ser.id,
                map.lane(ser.lane[k]).id,
                ser.s[k],
                ser.v[k],
                ser.delta[k]
            );
        }
    }
    out
}
