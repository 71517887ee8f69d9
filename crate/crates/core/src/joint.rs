//! Joint one-step update of all vehicles along their routes.
//!
//! Prediction, the rollout planner's internal simulator and the traffic
//! simulator all step vehicles through this model so that planned and
//! executed behaviour agree.

use serde::{Deserialize, Serialize};

use crate::driver::{
    self, acceleration, clamp_accel, gap_accept, idm, pair_case, DriverModel, GapCase, GapGeometry, ACCEL_MIN,
};
use crate::environment::{distance_to_pga, observation_on_route, EnvObservation, GapObservation, VehicleId, VEHICLE_LENGTH};
use crate::map::{Arm, LaneMap, RouteId};
use crate::prediction::PriorityAssignmentSet;

/// Creep speed of human drivers approaching an occluded yield point.
pub const V_CREEP: f64 = 2.0;
/// Distance to the stop line from which the cross traffic is visible.
pub const D_VIS: f64 = 15.0;
/// Creeping starts this far before the stop line.
pub const CREEP_START: f64 = 50.0;
/// Look-ahead for lower speed limits.
pub const LIMIT_LOOKAHEAD: f64 = 60.0;
/// Distance kept to a waypoint that must not be reached before `t_min`.
pub const WAYPOINT_STANDOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: VehicleId,
    pub is_cav: bool,
    pub route: RouteId,
    pub s: f64,
    pub v: f64,
    pub a: f64,
    pub departed: bool,
}

impl Agent {
    pub fn new(id: VehicleId, is_cav: bool, route: RouteId, s: f64, v: f64) -> Self {
        Self {
            id,
            is_cav,
            route,
            s,
            v,
            a: 0.0,
            departed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointConfig {
    /// CAVs know each other's declared routes.
    pub cooperative: bool,
    /// Human drivers creep towards occluded yield points.
    pub occlusion: bool,
    pub model: DriverModel,
}

/// A point on the route that must not be reached before `t_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalLimit {
    pub s: f64,
    pub t_min: f64,
}

impl ArrivalLimit {
    /// Strongest acceleration that still keeps the front behind the limit
    /// (less a standoff) until `t_min`; `None` once it no longer binds.
    pub fn required_accel(&self, s: f64, v: f64, now: f64) -> Option<f64> {
        if now >= self.t_min || s >= self.s {
            return None;
        }
        let tau = self.t_min - now;
        let dist = self.s - WAYPOINT_STANDOFF - s;
        if dist <= 0.0 {
            return Some(ACCEL_MIN);
        }
        let a_req = 2.0 * (dist - v * tau) / (tau * tau);
        let a_stop = -v * v / (2.0 * dist);
        Some(a_req.max(a_stop))
    }

    /// Whether full braking keeps the front short of the limit until `t_min`.
    pub fn feasible(&self, s: f64, v: f64, now: f64) -> bool {
        if now >= self.t_min || s >= self.s {
            return true;
        }
        let tau = self.t_min - now;
        let b = -ACCEL_MIN;
        let reach = if v / b <= tau { v * v / (2.0 * b) } else { v * tau - 0.5 * b * tau * tau };
        s + reach < self.s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub accel: f64,
    pub delta: u8,
    /// Past the point where it could still stop for the pending conflict.
    pub committed: bool,
}

pub struct JointModel<'m> {
    pub map: &'m LaneMap,
    pub cfg: JointConfig,
    /// Routes an observer cannot rule out, per route and lane slot.
    believed: Vec<Vec<Vec<RouteId>>>,
    must_yield: Vec<bool>,
}

impl<'m> JointModel<'m> {
    pub fn new(map: &'m LaneMap, cfg: JointConfig) -> Self {
        let believed = map
            .route_ids()
            .map(|r| {
                let route = map.route(r);
                route
                    .lane_indices()
                    .iter()
                    .map(|&lane| {
                        map.routes_through(lane)
                            .into_iter()
                            .filter(|&o| map.route(o).source_arm == route.source_arm)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let must_yield = map
            .route_ids()
            .map(|r| {
                map.route_ids().any(|o| {
                    map.route(o).source_arm != map.route(r).source_arm
                        && map.routes_conflict(r, o)
                        && map.has_right_of_way(o, r)
                })
            })
            .collect();
        Self {
            map,
            cfg,
            believed,
            must_yield,
        }
    }

    /// Whether a vehicle on `route` is statically required to yield to some
    /// crossing or merging route.
    pub fn must_yield(&self, route: RouteId) -> bool {
        self.must_yield[route.0]
    }

    /// Routes of `agent` that cannot be excluded from its current lane.
    pub fn worst_case(&self, agent: &Agent) -> &[RouteId] {
        let slot = self.map.route(agent.route).lane_slot_at(agent.s);
        &self.believed[agent.route.0][slot]
    }

    /// Routes the server cannot rule out: the declared route of a CAV, the
    /// worst case of a human driver.
    pub fn server_view<'a>(&'a self, agent: &'a Agent) -> &'a [RouteId] {
        if agent.is_cav {
            std::slice::from_ref(&agent.route)
        } else {
            self.worst_case(agent)
        }
    }

    /// Routes of `j` as perceived by `i`.
    pub fn perceived<'a>(&'a self, i: &Agent, j: &'a Agent) -> &'a [RouteId] {
        if self.cfg.cooperative && i.is_cav && j.is_cav {
            std::slice::from_ref(&j.route)
        } else {
            self.worst_case(j)
        }
    }

    /// Position of `j` on `route`, if j currently drives on one of its lanes.
    pub fn position_on(&self, j: &Agent, route: RouteId) -> Option<f64> {
        let rj = self.map.route(j.route);
        let (lane, s_lane) = if j.s >= rj.length() {
            let slot = rj.lane_indices().len() - 1;
            (rj.lane_indices()[slot], j.s - rj.offsets()[slot])
        } else {
            self.map.route_lane_at(j.route, j.s)
        };
        self.map.route(route).offset_of(lane).map(|o| o + s_lane)
    }

    /// Nearest vehicle ahead on `i`'s route: (front-to-front distance, speed).
    /// A vehicle that just turned off onto a diverging lane still leads
    /// everyone behind it on the lane it came from.
    pub fn lead(&self, agents: &[Agent], i: usize) -> Option<(f64, f64)> {
        let me = &agents[i];
        agents
            .iter()
            .enumerate()
            .filter(|(k, o)| *k != i && !o.departed)
            .filter_map(|(_, o)| {
                self.position_on(o, me.route)
                    .map(|p| p - me.s)
                    .or_else(|| self.position_on(me, o.route).map(|p| o.s - p))
                    .map(|d| (d, o.v))
            })
            .filter(|(d, _)| *d > 0.0)
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn observation(&self, agents: &[Agent], i: usize) -> EnvObservation {
        let a = &agents[i];
        observation_on_route(self.map, a.route, a.s, a.v, self.lead(agents, i))
    }

    /// Gap decision of agent `i` against all others under `p`, with the
    /// position of the nearest zone it would have to stop for.
    pub fn decide(&self, agents: &[Agent], i: usize, p: &PriorityAssignmentSet) -> (u8, Option<f64>, Vec<(VehicleId, GapCase)>) {
        let me = &agents[i];
        let map = self.map;
        let mut cases = Vec::new();
        let mut stop_zone: Option<f64> = None;
        for (k, other) in agents.iter().enumerate() {
            if k == i || other.departed {
                continue;
            }
            let mut zones = Vec::new();
            for &rj in self.perceived(me, other) {
                for z in map.route_zones(me.route, rj) {
                    if me.s < z.entry_a && other.s - VEHICLE_LENGTH < z.exit_b {
                        zones.push((rj, z));
                    }
                }
            }
            if zones.is_empty() {
                continue;
            }
            let row = zones.iter().all(|(rj, _)| map.has_right_of_way(me.route, *rj));
            let case = pair_case(p.contains(me.id, other.id), p.contains(other.id, me.id), row, || {
                let d_stop_i = map.route(me.route).entry_s() - me.s;
                zones.iter().all(|(rj, z)| {
                    let obs = GapObservation {
                        d_pga: distance_to_pga(d_stop_i, me.v),
                        v_i: me.v,
                        d_stop_j: map.route(*rj).entry_s() - other.s,
                        v_j: other.v,
                    };
                    let geo = GapGeometry {
                        dist_i_to_exit: z.exit_a - me.s,
                        dist_j_to_entry: z.entry_b - other.s,
                        v_max_j: map.speed_limit_at(*rj, other.s),
                    };
                    gap_accept(&obs, &geo, &self.cfg.model)
                })
            });
            if case.delta() == 0 {
                let first = zones.iter().map(|(_, z)| z.entry_a).fold(f64::INFINITY, f64::min);
                stop_zone = Some(stop_zone.map_or(first, |s: f64| s.min(first)));
            }
            cases.push((other.id, case));
        }
        let delta = cases.iter().map(|(_, c)| c.delta()).min().unwrap_or(1);
        (delta, stop_zone, cases)
    }

    /// Acceleration command for agent `i`.
    pub fn command(
        &self,
        agents: &[Agent],
        i: usize,
        p: &PriorityAssignmentSet,
        limits: &[ArrivalLimit],
        now: f64,
    ) -> Command {
        let me = &agents[i];
        if me.departed {
            return Command::default();
        }
        let map = self.map;
        let route = map.route(me.route);
        let idm_p = &self.cfg.model.idm;
        let (delta, stop_zone, _) = self.decide(agents, i, p);
        let mut obs = self.observation(agents, i);

        // Where to stop when yielding: the stop line, or the first contested
        // zone once past it.
        let mut committed = false;
        let mut yield_delta = delta;
        if delta == 0 {
            let gap = if obs.d_stop >= 0.0 {
                obs.d_stop
            } else {
                stop_zone.map_or(0.0, |z| z - me.s - 1.0)
            };
            if me.v * me.v / (2.0 * -ACCEL_MIN) > gap + 0.5 {
                committed = true;
                yield_delta = 1;
            } else if matches!(self.cfg.model.accel, driver::AccelModel::Analytic) {
                obs.d_stop = gap;
            }
        }
        let mut a = acceleration(&obs, yield_delta, &self.cfg.model);

        // Occupied conflict zones ahead act as stationary obstacles.
        for (k, other) in agents.iter().enumerate() {
            if k == i || other.departed {
                continue;
            }
            for &rj in self.perceived(me, other) {
                for z in map.route_zones(me.route, rj) {
                    let occupied = other.s > z.entry_b && other.s - VEHICLE_LENGTH < z.exit_b;
                    if occupied && me.s < z.entry_a {
                        let gap = z.entry_a - me.s;
                        if me.v * me.v / (2.0 * -ACCEL_MIN) <= gap + 0.5 {
                            a = a.min(idm(idm_p, me.v, obs.v_max, Some((gap, 0.0))));
                        }
                    }
                }
            }
        }

        // Lower speed limits ahead.
        for (slot, &lane) in route.lane_indices().iter().enumerate() {
            let d = route.offsets()[slot] - me.s;
            if d <= 0.0 || d > LIMIT_LOOKAHEAD {
                continue;
            }
            let vt = map.lane(lane).speed_limit;
            if me.v > vt {
                a = a.min((vt * vt - me.v * me.v) / (2.0 * d.max(0.5)));
            }
        }

        if self.cfg.occlusion && !me.is_cav && self.must_yield(me.route) {
            let d = route.entry_s() - me.s;
            if d > D_VIS && d <= CREEP_START {
                a = a.min(((V_CREEP - me.v) / 0.5).max(-idm_p.b_comf));
            } else if d > CREEP_START && me.v > V_CREEP {
                let reach = (V_CREEP * V_CREEP - me.v * me.v) / (2.0 * (d - CREEP_START));
                a = a.min(reach.max(-idm_p.b_comf));
            }
        }

        for lim in limits {
            if let Some(a_wp) = lim.required_accel(me.s, me.v, now) {
                a = a.min(a_wp);
            }
        }

        Command {
            accel: clamp_accel(a),
            delta,
            committed,
        }
    }

    /// Advances all agents by `dt` with the given accelerations; the applied
    /// acceleration is stored back on each agent.
    pub fn integrate(&self, agents: &mut [Agent], accels: &[f64], dt: f64) {
        for (a, &acc) in agents.iter_mut().zip(accels) {
            if a.departed {
                a.a = 0.0;
                continue;
            }
            let acc = clamp_accel(acc);
            let v_new = (a.v + acc * dt).max(0.0);
            a.s += (a.v + v_new) / 2.0 * dt;
            a.a = (v_new - a.v) / dt;
            a.v = v_new;
            let len = self.map.route(a.route).length();
            if a.s >= len {
                a.s = len;
                a.departed = true;
            }
        }
    }

    pub fn speed_limit(&self, agent: &Agent) -> f64 {
        self.map.speed_limit_at(agent.route, agent.s)
    }

    pub fn source_arm(&self, agent: &Agent) -> Arm {
        self.map.route(agent.route).source_arm
    }
}
