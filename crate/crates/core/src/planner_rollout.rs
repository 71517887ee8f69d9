//! Rollout planner: a joint policy is rolled forward in an internal simulator
//! seeded from the environment model, and the recorded trajectories are
//! turned into waypoint maneuvers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{arrival_time, DriverModel};
use crate::environment::{EnvError, EnvironmentModel, VehicleId, VEHICLE_LENGTH};
use crate::geometry::normalize_angle;
use crate::joint::{Agent, JointConfig, JointModel};
use crate::map::LaneMap;
use crate::planner_opt::{merge_waypoints, Maneuver, ManeuverWaypoint};
use crate::prediction::{agents_from_em, crossing_time, PriorityAssignmentSet, TraceRecorder};

pub const REPLAN_PERIOD: f64 = 2.0;
pub const WAYPOINT_TOLERANCE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("policy failed: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Crossing,
    SameLane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: VehicleId,
    /// Arc length along the vehicle's current lane.
    pub lane_position: f64,
    pub speed: f64,
    pub accel: f64,
    pub is_cav: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub distance: f64,
    /// Bearing of the target in the source vehicle's frame.
    pub bearing: f64,
    /// Source has right of way over the target.
    pub priority: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub globals: Vec<f64>,
}

impl SceneGraph {
    pub fn edges_between(&self, a: VehicleId, b: VehicleId) -> impl Iterator<Item = &Edge> {
        let ia = self.vertices.iter().position(|v| v.id == a);
        let ib = self.vertices.iter().position(|v| v.id == b);
        self.edges.iter().filter(move |e| {
            (Some(e.from), Some(e.to)) == (ia, ib) || (Some(e.from), Some(e.to)) == (ib, ia)
        })
    }

    /// Vertex and edge lists with features, one record per line.
    pub fn dump(&self) -> String {
        let mut out = String::from("# vertices: id,lane_position,speed,accel,is_cav\n");
        for v in &self.vertices {
            let _ = writeln!(out, "{},{:.3},{:.3},{:.3},{}", v.id, v.lane_position, v.speed, v.accel, v.is_cav);
        }
        out.push_str("# edges: from,to,kind,distance,bearing,priority\n");
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{},{},{:?},{:.3},{:.4},{}",
                self.vertices[e.from].id, self.vertices[e.to].id, e.kind, e.distance, e.bearing, e.priority
            );
        }
        out
    }
}

/// Scene graph of the server-side environment model.
pub fn build_scene_graph(em: &EnvironmentModel, map: &LaneMap) -> Result<SceneGraph, EnvError> {
    let agents = agents_from_em(em, map)?;
    let jm = JointModel::new(
        map,
        JointConfig {
            cooperative: true,
            ..Default::default()
        },
    );
    Ok(scene_graph(&jm, &agents))
}

pub fn scene_graph(jm: &JointModel, agents: &[Agent]) -> SceneGraph {
    let map = jm.map;
    let live: Vec<&Agent> = agents.iter().filter(|a| !a.departed).collect();
    let lanes: Vec<(usize, f64)> = live.iter().map(|a| map.route_lane_at(a.route, a.s)).collect();
    let poses: Vec<_> = live.iter().map(|a| map.route_pose(a.route, a.s)).collect();
    let vertices = live
        .iter()
        .zip(&lanes)
        .map(|(a, (_, s))| Vertex {
            id: a.id,
            lane_position: *s,
            speed: a.v,
            accel: a.a,
            is_cav: a.is_cav,
        })
        .collect();
    let edge = |from: usize, to: usize, kind, priority| {
        let rel = poses[to].position - poses[from].position;
        Edge {
            from,
            to,
            kind,
            distance: rel.norm(),
            bearing: normalize_angle(rel.angle() - poses[from].heading),
            priority,
        }
    };
    let mut edges = Vec::new();
    for i in 0..live.len() {
        for j in 0..live.len() {
            if i == j {
                continue;
            }
            let (a, b) = (live[i], live[j]);
            let mut combos = Vec::new();
            for &ra in jm.server_view(a) {
                for &rb in jm.server_view(b) {
                    let pending = map
                        .route_zones(ra, rb)
                        .iter()
                        .any(|z| a.s - VEHICLE_LENGTH < z.exit_a && b.s - VEHICLE_LENGTH < z.exit_b);
                    if pending {
                        combos.push((ra, rb));
                    }
                }
            }
            if !combos.is_empty() {
                let row = combos.iter().all(|&(ra, rb)| map.has_right_of_way(ra, rb));
                edges.push(edge(i, j, EdgeKind::Crossing, row));
            }
        }
    }
    // leader -> nearest follower on the same lane
    for j in 0..live.len() {
        let leader = (0..live.len())
            .filter(|&i| i != j && lanes[i].0 == lanes[j].0 && lanes[i].1 > lanes[j].1)
            .min_by(|&x, &y| lanes[x].1.total_cmp(&lanes[y].1).then(x.cmp(&y)));
        if let Some(i) = leader {
            edges.push(edge(i, j, EdgeKind::SameLane, true));
        }
    }
    SceneGraph {
        vertices,
        edges,
        globals: Vec::new(),
    }
}

/// Longitudinal acceleration command per CAV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAction {
    pub accel: BTreeMap<VehicleId, f64>,
}

/// What a policy may inspect besides the graph.
pub struct PolicyContext<'a, 'm> {
    pub model: &'a JointModel<'m>,
    pub agents: &'a [Agent],
    pub time: f64,
}

pub trait Policy {
    fn act(&mut self, graph: &SceneGraph, ctx: &PolicyContext) -> Result<JointAction, RolloutError>;

    /// Priority pairs the policy committed to, if it tracks any.
    fn assignments(&self) -> PriorityAssignmentSet {
        PriorityAssignmentSet::new()
    }
}

/// First-come-first-served across CAVs by earliest predicted zone arrival;
/// human drivers keep their right of way. Decisions are kept once made.
#[derive(Debug, Clone, Default)]
pub struct HeuristicPolicy {
    locked: PriorityAssignmentSet,
}

impl HeuristicPolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Time for `a` to reach route position `zone_entry`.
fn zone_arrival(jm: &JointModel, a: &Agent, zone_entry: f64) -> f64 {
    arrival_time(zone_entry - a.s, a.v, jm.cfg.model.idm.a_max, jm.speed_limit(a).max(0.1))
}

/// Precedence edges x -> y ("x goes first") implied by locked decisions and
/// static right of way for every still-open pair.
fn precedence(jm: &JointModel, agents: &[Agent], locked: &PriorityAssignmentSet, skip: (usize, usize)) -> Vec<Vec<usize>> {
    let n = agents.len();
    let mut adj = vec![Vec::new(); n];
    let idx: BTreeMap<VehicleId, usize> = agents.iter().enumerate().map(|(k, a)| (a.id, k)).collect();
    for (x, y) in locked.iter() {
        if let (Some(&a), Some(&b)) = (idx.get(&x), idx.get(&y)) {
            adj[a].push(b);
        }
    }
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (&agents[i], &agents[j]);
            if i == j || a.departed || b.departed || locked.orders(a.id, b.id) || (i, j) == skip || (j, i) == skip {
                continue;
            }
            let routes_b = jm.perceived(a, b);
            let mut any = false;
            let mut row = true;
            for &rb in routes_b {
                for z in jm.map.route_zones(a.route, rb) {
                    if a.s - VEHICLE_LENGTH < z.exit_a && b.s - VEHICLE_LENGTH < z.exit_b {
                        any = true;
                        row &= jm.map.has_right_of_way(a.route, rb);
                    }
                }
            }
            if any && row {
                adj[i].push(j);
            }
        }
    }
    adj
}

fn reaches(adj: &[Vec<usize>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![from];
    while let Some(x) = stack.pop() {
        if x == to {
            return true;
        }
        if !std::mem::replace(&mut seen[x], true) {
            stack.extend(adj[x].iter().copied());
        }
    }
    false
}

impl HeuristicPolicy {
    /// Locks the order of every undecided CAV pair with a shared zone ahead
    /// of both vehicles.
    pub fn update_locks(&mut self, jm: &JointModel, agents: &[Agent]) {
        let mut cands = Vec::new();
        for i in 0..agents.len() {
            for j in i + 1..agents.len() {
                let (a, b) = (&agents[i], &agents[j]);
                if !(a.is_cav && b.is_cav) || a.departed || b.departed || self.locked.orders(a.id, b.id) {
                    continue;
                }
                let ahead = jm
                    .map
                    .route_zones(a.route, b.route)
                    .iter()
                    .filter(|z| a.s < z.entry_a && b.s < z.entry_b)
                    .map(|z| (zone_arrival(jm, a, z.entry_a), zone_arrival(jm, b, z.entry_b)))
                    .min_by(|x, y| x.0.min(x.1).total_cmp(&y.0.min(y.1)));
                if let Some((ta, tb)) = ahead {
                    cands.push((ta.min(tb), i, j, ta, tb));
                }
            }
        }
        cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for (_, i, j, ta, tb) in cands {
            let (first, second) = if ta < tb || (ta == tb && jm.map.has_right_of_way(agents[i].route, agents[j].route)) {
                (i, j)
            } else {
                (j, i)
            };
            let adj = precedence(jm, agents, &self.locked, (i, j));
            let (x, y) = if reaches(&adj, second, first) { (second, first) } else { (first, second) };
            if reaches(&adj, y, x) {
                // both orders would close a cycle; leave it to the static rules
                continue;
            }
            self.locked
                .insert(agents[x].id, agents[y].id)
                .expect("undecided pair");
        }
    }
}

impl Policy for HeuristicPolicy {
    fn act(&mut self, _graph: &SceneGraph, ctx: &PolicyContext) -> Result<JointAction, RolloutError> {
        self.update_locks(ctx.model, ctx.agents);
        let mut action = JointAction::default();
        for (i, a) in ctx.agents.iter().enumerate() {
            if a.is_cav {
                let c = ctx.model.command(ctx.agents, i, &self.locked, &[], ctx.time);
                action.accel.insert(a.id, c.accel);
            }
        }
        Ok(action)
    }

    fn assignments(&self) -> PriorityAssignmentSet {
        self.locked.clone()
    }
}

/// One-shot heuristic action without previously locked decisions.
pub fn heuristic_policy(graph: &SceneGraph, ctx: &PolicyContext) -> JointAction {
    HeuristicPolicy::new().act(graph, ctx).expect("heuristic policy is total")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub dt: f64,
    /// Observation/action period of the policy.
    pub policy_period: f64,
    /// Simulated-time budget of one rollout.
    pub timeout: f64,
    pub tolerance: f64,
    pub occlusion: bool,
    pub model: DriverModel,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            policy_period: 0.2,
            timeout: 30.0,
            tolerance: WAYPOINT_TOLERANCE,
            occlusion: true,
            model: DriverModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    pub maneuvers: Vec<Maneuver>,
    pub timed_out: bool,
    pub assignments: PriorityAssignmentSet,
    pub sim_time: f64,
}

pub fn replanning_schedule(now: f64, last_plan: f64, event: bool) -> bool {
    event || now - last_plan >= REPLAN_PERIOD - 1e-9
}

pub fn rollout_plan(
    em: &EnvironmentModel,
    policy: &mut dyn Policy,
    map: &LaneMap,
    cfg: &RolloutConfig,
) -> Result<RolloutOutcome, RolloutError> {
    let agents = agents_from_em(em, map)?;
    let jm = JointModel::new(
        map,
        JointConfig {
            cooperative: true,
            occlusion: cfg.occlusion,
            model: cfg.model.clone(),
        },
    );
    rollout_agents(&jm, agents, em.timestamp, policy, cfg)
}

fn cleared(jm: &JointModel, a: &Agent) -> bool {
    a.departed || a.s - VEHICLE_LENGTH >= jm.map.route(a.route).exit_s()
}

pub fn rollout_agents(
    jm: &JointModel,
    mut agents: Vec<Agent>,
    now: f64,
    policy: &mut dyn Policy,
    cfg: &RolloutConfig,
) -> Result<RolloutOutcome, RolloutError> {
    let map = jm.map;
    let initial = agents.clone();
    let hold = ((cfg.policy_period / cfg.dt).round() as usize).max(1);
    let max_steps = (cfg.timeout / cfg.dt).round() as usize;
    let mut rec = TraceRecorder::new(&agents, cfg.dt, max_steps + 1);
    let deltas = vec![1u8; agents.len()];
    let mut held = JointAction::default();
    let mut accels = vec![0.0; agents.len()];
    let mut k = 0;
    let mut timed_out = false;
    loop {
        let t = k as f64 * cfg.dt;
        rec.record(map, t, &agents, &deltas);
        if agents.iter().all(|a| cleared(jm, a)) {
            break;
        }
        if k >= max_steps {
            timed_out = true;
            break;
        }
        if k % hold == 0 {
            let graph = scene_graph(jm, &agents);
            let ctx = PolicyContext {
                model: jm,
                agents: &agents,
                time: t,
            };
            held = policy.act(&graph, &ctx)?;
        }
        let none = PriorityAssignmentSet::new();
        for (i, a) in agents.iter().enumerate() {
            accels[i] = if a.is_cav {
                *held
                    .accel
                    .get(&a.id)
                    .ok_or_else(|| RolloutError::Policy(format!("no action for vehicle {}", a.id)))?
            } else {
                jm.command(&agents, i, &none, &[], t).accel
            };
        }
        jm.integrate(&mut agents, &accels, cfg.dt);
        k += 1;
    }
    let assignments = policy.assignments();
    let trace = rec.finish(map, &assignments);
    let sim_time = k as f64 * cfg.dt;

    let mut per_vehicle: BTreeMap<VehicleId, Vec<ManeuverWaypoint>> = BTreeMap::new();
    let series = |id: VehicleId| trace.vehicles.iter().find(|s| s.id == id).expect("recorded");
    let tol = cfg.tolerance;
    for (idx, a0) in initial.iter().enumerate() {
        if !a0.is_cav || (timed_out && !cleared(jm, &agents[idx])) {
            continue;
        }
        let ser = series(a0.id);
        let route = map.route(a0.route);
        let wps = per_vehicle.entry(a0.id).or_default();
        for s_mark in [route.entry_s(), route.exit_s()] {
            if a0.s >= s_mark {
                continue;
            }
            if let Some(t) = crossing_time(&trace.times, &ser.s, s_mark) {
                wps.push(ManeuverWaypoint {
                    p: map.route_pose(a0.route, s_mark).position,
                    s: s_mark,
                    t_min: now + t - tol,
                    t_max: now + t + tol,
                    pred: None,
                    succ: None,
                });
            }
        }
    }
    for (i, j) in assignments.iter() {
        for zi in trace.pending.iter().filter(|z| z.vehicle == i) {
            for zj in trace.pending.iter().filter(|z| z.vehicle == j && z.zone == zi.zone && z.lane != zi.lane) {
                let occ = |v: VehicleId, lane: usize| {
                    trace
                        .occupancy
                        .iter()
                        .find(|o| o.vehicle == v && o.zone == zi.zone && o.lane == lane)
                };
                let (Some(oi), Some(oj)) = (occ(i, zi.lane), occ(j, zj.lane)) else {
                    continue;
                };
                let Some(leave_i) = oi.t_leave else { continue };
                let ai = &initial[initial.iter().position(|a| a.id == i).expect("present")];
                let aj = &initial[initial.iter().position(|a| a.id == j).expect("present")];
                if !(per_vehicle.contains_key(&i) && per_vehicle.contains_key(&j)) || zj.start <= aj.s || zi.end <= ai.s {
                    continue;
                }
                per_vehicle.get_mut(&j).expect("checked").push(ManeuverWaypoint {
                    p: map.route_pose(aj.route, zj.start).position,
                    s: zj.start,
                    t_min: now + leave_i.min(oj.t_enter),
                    t_max: now + oj.t_enter + tol,
                    pred: Some(i),
                    succ: None,
                });
                // the waypoint marks the front reaching the zone end
                let front_i = crossing_time(&trace.times, &series(i).s, zi.end).unwrap_or(leave_i);
                per_vehicle.get_mut(&i).expect("checked").push(ManeuverWaypoint {
                    p: map.route_pose(ai.route, zi.end).position,
                    s: zi.end,
                    t_min: now + front_i - tol,
                    t_max: now + front_i + tol,
                    pred: None,
                    succ: Some(j),
                });
            }
        }
    }
    let maneuvers = per_vehicle
        .into_iter()
        .filter(|(_, w)| !w.is_empty())
        .map(|(vehicle, wps)| Maneuver {
            vehicle,
            waypoints: merge_waypoints(wps),
            issued_at: now,
        })
        .collect();
    Ok(RolloutOutcome {
        maneuvers,
        timed_out,
        assignments,
        sim_time,
    })
}
