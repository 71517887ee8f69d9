//! Cyclic priority-assignment search and waypoint derivation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::DriverModel;
use crate::environment::{EnvironmentModel, VehicleId, VEHICLE_LENGTH};
use crate::geometry::Vec2;
use crate::joint::{Agent, JointConfig, JointModel};
use crate::map::LaneMap;
use crate::prediction::{
    agents_from_em, efficiency, predict_agents, validate, PredictionConfig, PredictionError, PredictionTrace,
    PriorityAssignmentSet,
};

pub const CANDIDATE_LIMIT: usize = 100;
/// Multi-pair extensions are only generated below this many open pairs.
pub const MULTI_EXTENSION_MAX_PAIRS: usize = 15;
pub const ENTRY_MARGIN: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error("pair ({0}, {1}) shares no conflict zone")]
    NoSharedZone(VehicleId, VehicleId),
}

impl From<crate::environment::EnvError> for PlannerError {
    fn from(e: crate::environment::EnvError) -> Self {
        PlannerError::Prediction(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverWaypoint {
    pub p: Vec2,
    /// Arc length of `p` along the vehicle's route.
    pub s: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub pred: Option<VehicleId>,
    pub succ: Option<VehicleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maneuver {
    pub vehicle: VehicleId,
    pub waypoints: Vec<ManeuverWaypoint>,
    pub issued_at: f64,
}

/// One line of the maneuver message stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointMessage {
    pub vehicle_id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub pred_id: Option<VehicleId>,
    pub succ_id: Option<VehicleId>,
    pub issued_at: f64,
}

impl Maneuver {
    pub fn messages(&self) -> impl Iterator<Item = WaypointMessage> + '_ {
        self.waypoints.iter().map(|w| WaypointMessage {
            vehicle_id: self.vehicle,
            x: w.p.x,
            y: w.p.y,
            t_min: w.t_min,
            t_max: w.t_max,
            pred_id: w.pred,
            succ_id: w.succ,
            issued_at: self.issued_at,
        })
    }

    /// Predecessor/successor links, ignoring timing.
    pub fn structure(&self) -> Vec<(Option<VehicleId>, Option<VehicleId>)> {
        let mut v: Vec<_> = self.waypoints.iter().map(|w| (w.pred, w.succ)).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// JSON lines, one waypoint per line.
pub fn maneuvers_to_json_lines(maneuvers: &[Maneuver]) -> String {
    let mut out = String::new();
    for m in maneuvers {
        for msg in m.messages() {
            out.push_str(&serde_json::to_string(&msg).expect("message serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn messages_from_json_lines(text: &str) -> Result<Vec<WaypointMessage>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlannerState {
    pub p_current: PriorityAssignmentSet,
    pub cycle_index: u64,
    pub last_maneuvers: BTreeMap<VehicleId, Maneuver>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub prediction: PredictionConfig,
    pub limit: usize,
    pub margin: f64,
    pub model: DriverModel,
    pub parallel: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            prediction: PredictionConfig::default(),
            limit: CANDIDATE_LIMIT,
            margin: ENTRY_MARGIN,
            model: DriverModel::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleReport {
    pub predictions: usize,
    pub candidates: usize,
    pub base_efficiency: f64,
    pub empty_efficiency: f64,
    pub selected_efficiency: f64,
    pub reset: bool,
}

/// Evaluated candidate: the assignment set, its trace and efficiency.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub p: PriorityAssignmentSet,
    pub trace: PredictionTrace,
    pub efficiency: f64,
    pub valid: bool,
}

fn shared_zone_pending(agents: &[Agent], jm: &JointModel, i: usize, j: usize) -> bool {
    let (a, b) = (&agents[i], &agents[j]);
    jm.map
        .route_zones(a.route, b.route)
        .iter()
        .any(|z| a.s - VEHICLE_LENGTH < z.exit_a && b.s - VEHICLE_LENGTH < z.exit_b)
}

/// Conflicting CAV pairs (smaller id first) where neither vehicle has entered
/// the shared zone yet.
pub fn open_cav_pairs(agents: &[Agent], jm: &JointModel) -> Vec<(VehicleId, VehicleId)> {
    let mut out = Vec::new();
    for i in 0..agents.len() {
        for j in 0..agents.len() {
            let (a, b) = (&agents[i], &agents[j]);
            if !(a.is_cav && b.is_cav) || a.id >= b.id || a.departed || b.departed {
                continue;
            }
            let open = jm
                .map
                .route_zones(a.route, b.route)
                .iter()
                .any(|z| a.s < z.entry_a && b.s < z.entry_b);
            if open {
                out.push((a.id, b.id));
            }
        }
    }
    out.sort();
    out
}

/// Candidate assignment sets, in evaluation order: ∅, `p_prev`, single
/// extensions, then (for fewer than 15 open pairs) multi-pair extensions by
/// increasing size; truncated to `limit`.
pub fn enumerate_extensions(
    p_prev: &PriorityAssignmentSet,
    open: &[(VehicleId, VehicleId)],
    limit: usize,
) -> Vec<PriorityAssignmentSet> {
    let open: Vec<_> = open.iter().copied().filter(|&(a, b)| !p_prev.orders(a, b)).collect();
    let mut out: Vec<PriorityAssignmentSet> = Vec::new();
    let push = |p: PriorityAssignmentSet, out: &mut Vec<PriorityAssignmentSet>| {
        if out.len() < limit && !out.contains(&p) {
            out.push(p);
        }
    };
    push(PriorityAssignmentSet::new(), &mut out);
    push(p_prev.clone(), &mut out);
    for &(a, b) in &open {
        for (x, y) in [(a, b), (b, a)] {
            let mut p = p_prev.clone();
            p.insert(x, y).expect("open pairs are unordered in p_prev");
            push(p, &mut out);
        }
    }
    if open.len() < MULTI_EXTENSION_MAX_PAIRS {
        'sizes: for size in 2..=open.len() {
            for combo in combinations(open.len(), size) {
                for mask in 0..(1u32 << size) {
                    if out.len() >= limit {
                        break 'sizes;
                    }
                    let mut p = p_prev.clone();
                    for (bit, &k) in combo.iter().enumerate() {
                        let (a, b) = open[k];
                        let (x, y) = if mask & (1 << bit) == 0 { (a, b) } else { (b, a) };
                        p.insert(x, y).expect("distinct open pairs");
                    }
                    push(p, &mut out);
                }
            }
        }
    }
    out
}

/// Index combinations of `k` out of `n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Strict preference between evaluated candidates: higher efficiency, then
/// fewer assignments, then lexicographic pair order.
pub fn better(a: &Evaluated, b: &Evaluated) -> bool {
    if a.efficiency != b.efficiency {
        return a.efficiency > b.efficiency;
    }
    if a.p.len() != b.p.len() {
        return a.p.len() < b.p.len();
    }
    a.p.sort_key() < b.p.sort_key()
}

pub fn evaluate(jm: &JointModel, agents: &[Agent], p: &PriorityAssignmentSet, cfg: &PredictionConfig) -> Evaluated {
    let trace = predict_agents(jm, agents.to_vec(), p, cfg);
    let valid = validate(&trace, p).valid;
    Evaluated {
        efficiency: efficiency(&trace, p, cfg),
        p: p.clone(),
        trace,
        valid,
    }
}

fn evaluate_all(jm: &JointModel, agents: &[Agent], cands: &[PriorityAssignmentSet], cfg: &OptConfig) -> Vec<Evaluated> {
    if cfg.parallel {
        cands.par_iter().map(|p| evaluate(jm, agents, p, &cfg.prediction)).collect()
    } else {
        cands.iter().map(|p| evaluate(jm, agents, p, &cfg.prediction)).collect()
    }
}

pub fn joint_model<'m>(map: &'m LaneMap, cfg: &OptConfig) -> JointModel<'m> {
    JointModel::new(
        map,
        JointConfig {
            cooperative: true,
            occlusion: cfg.prediction.occlusion,
            model: cfg.model.clone(),
        },
    )
}

/// Drops assignments whose vehicles left, or whose prioritized vehicle has
/// already cleared every zone shared with the yielding one.
pub fn prune(p: &PriorityAssignmentSet, agents: &[Agent], jm: &JointModel) -> PriorityAssignmentSet {
    let idx: BTreeMap<VehicleId, usize> = agents.iter().enumerate().map(|(k, a)| (a.id, k)).collect();
    let mut out = p.clone();
    out.retain(|i, j| match (idx.get(&i), idx.get(&j)) {
        (Some(&a), Some(&b)) => {
            !agents[a].departed && !agents[b].departed && shared_zone_pending(agents, jm, a, b)
        }
        _ => false,
    });
    out
}

/// One planning cycle.
pub fn plan_cycle(
    em: &EnvironmentModel,
    state: &PlannerState,
    cfg: &OptConfig,
    map: &LaneMap,
) -> Result<(PlannerState, Vec<Maneuver>, CycleReport), PlannerError> {
    let jm = joint_model(map, cfg);
    let agents = agents_from_em(em, map)?;
    plan_cycle_agents(&jm, &agents, em.timestamp, state, cfg)
}

pub fn plan_cycle_agents(
    jm: &JointModel,
    agents: &[Agent],
    now: f64,
    state: &PlannerState,
    cfg: &OptConfig,
) -> Result<(PlannerState, Vec<Maneuver>, CycleReport), PlannerError> {
    let mut next = PlannerState {
        p_current: PriorityAssignmentSet::new(),
        cycle_index: state.cycle_index + 1,
        last_maneuvers: BTreeMap::new(),
    };
    let mut report = CycleReport::default();
    if agents.is_empty() {
        return Ok((next, Vec::new(), report));
    }
    let p_prev = prune(&state.p_current, agents, jm);
    let open = open_cav_pairs(agents, jm);
    if p_prev.is_empty() && open.is_empty() {
        return Ok((next, Vec::new(), report));
    }
    let cands = enumerate_extensions(&p_prev, &open, cfg.limit);
    let evaluated = evaluate_all(jm, agents, &cands, cfg);
    report.predictions = evaluated.len();
    report.candidates = cands.len();
    let empty = &evaluated[0];
    let base = evaluated.iter().find(|e| e.p == p_prev).expect("p_prev is a candidate");
    report.empty_efficiency = empty.efficiency;
    report.base_efficiency = base.efficiency;
    if !p_prev.is_empty() && empty.efficiency > base.efficiency {
        report.reset = true;
        report.selected_efficiency = empty.efficiency;
        return Ok((next, Vec::new(), report));
    }
    let mut best: Option<&Evaluated> = None;
    for e in evaluated.iter().filter(|e| e.valid) {
        if best.is_none_or(|b| better(e, b)) {
            best = Some(e);
        }
    }
    let Some(best) = best else {
        report.selected_efficiency = empty.efficiency;
        return Ok((next, Vec::new(), report));
    };
    report.selected_efficiency = best.efficiency;
    let maneuvers = derive_waypoints(&best.trace, &best.p, jm, agents, now, cfg.margin, cfg.prediction.horizon)?;
    next.p_current = best.p.clone();
    next.last_maneuvers = maneuvers.iter().map(|m| (m.vehicle, m.clone())).collect();
    Ok((next, maneuvers, report))
}

/// Waypoints for every assignment: an entry waypoint for the yielding vehicle
/// and an exit waypoint for the prioritized one at each shared zone.
pub fn derive_waypoints(
    trace: &PredictionTrace,
    p: &PriorityAssignmentSet,
    jm: &JointModel,
    agents: &[Agent],
    now: f64,
    margin: f64,
    horizon: f64,
) -> Result<Vec<Maneuver>, PlannerError> {
    let map = jm.map;
    let agent = |id: VehicleId| agents.iter().find(|a| a.id == id).expect("assigned vehicles are present");
    let mut per_vehicle: BTreeMap<VehicleId, Vec<ManeuverWaypoint>> = BTreeMap::new();
    for (i, j) in p.iter() {
        let mut found = false;
        for zi in trace.pending.iter().filter(|z| z.vehicle == i) {
            for zj in trace.pending.iter().filter(|z| z.vehicle == j && z.zone == zi.zone && z.lane != zi.lane) {
                found = true;
                let leave_i = trace
                    .occupancy
                    .iter()
                    .find(|o| o.vehicle == i && o.zone == zi.zone && o.lane == zi.lane)
                    .and_then(|o| o.t_leave)
                    .unwrap_or(horizon);
                let (ai, aj) = (agent(i), agent(j));
                // both ends of the link or neither, so pred/succ stay mutual
                if zj.start <= aj.s || zi.end <= ai.s {
                    continue;
                }
                per_vehicle.entry(j).or_default().push(ManeuverWaypoint {
                    p: map.route_pose(aj.route, zj.start).position,
                    s: zj.start,
                    t_min: now + leave_i + margin,
                    t_max: now + horizon,
                    pred: Some(i),
                    succ: None,
                });
                per_vehicle.entry(i).or_default().push(ManeuverWaypoint {
                    p: map.route_pose(ai.route, zi.end).position,
                    s: zi.end,
                    t_min: 0.0,
                    t_max: now + leave_i,
                    pred: None,
                    succ: Some(j),
                });
            }
        }
        if !found {
            return Err(PlannerError::NoSharedZone(i, j));
        }
    }
    Ok(per_vehicle
        .into_iter()
        .map(|(vehicle, wps)| Maneuver {
            vehicle,
            waypoints: merge_waypoints(wps),
            issued_at: now,
        })
        .collect())
}

/// Sorts by route position and makes time bounds non-decreasing along it.
pub fn merge_waypoints(mut wps: Vec<ManeuverWaypoint>) -> Vec<ManeuverWaypoint> {
    wps.sort_by(|a, b| {
        a.s.total_cmp(&b.s)
            .then(a.pred.cmp(&b.pred))
            .then(a.succ.cmp(&b.succ))
    });
    for k in 1..wps.len() {
        wps[k].t_min = wps[k].t_min.max(wps[k - 1].t_min);
    }
    for k in (0..wps.len().saturating_sub(1)).rev() {
        wps[k].t_max = wps[k].t_max.min(wps[k + 1].t_max);
    }
    for w in &mut wps {
        w.t_max = w.t_max.max(w.t_min);
    }
    wps
}
