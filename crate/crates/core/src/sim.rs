//! Closed-loop traffic simulator: simulated human drivers, CAVs executing
//! planner maneuvers, request/reject/abort handling and trajectory logging.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::DriverModel;
use crate::environment::{EnvironmentModel, VehicleId, VehicleState, VEHICLE_LENGTH};
use crate::evaluation::scenarios::{Scenario, SPAWN_SPEED};
use crate::joint::{Agent, ArrivalLimit, JointConfig, JointModel};
use crate::map::{Arm, LaneMap, RouteId};
use crate::planner_opt::{plan_cycle_agents, Maneuver, OptConfig, PlannerState};
use crate::planner_rollout::{replanning_schedule, rollout_agents, HeuristicPolicy, RolloutConfig};
use crate::prediction::{agents_from_em, crossing_order, PriorityAssignmentSet, TraceRecorder};

pub const SIM_DT: f64 = 0.05;
/// Evaluation end marker behind the junction exit.
pub const END_MARKER: f64 = 15.0;
/// Steps between two optimization cycles (5 Hz at 50 ms).
pub const OPT_STEPS_PER_CYCLE: u64 = 4;
const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlannerKind {
    Opt,
    Rollout,
    NonCooperative,
    AllHdv,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 4] = [
        PlannerKind::Opt,
        PlannerKind::Rollout,
        PlannerKind::NonCooperative,
        PlannerKind::AllHdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Opt => "opt",
            PlannerKind::Rollout => "rollout",
            PlannerKind::NonCooperative => "nc",
            PlannerKind::AllHdv => "hdv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn cooperative(self) -> bool {
        matches!(self, PlannerKind::Opt | PlannerKind::Rollout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub planner: PlannerKind,
    pub seed: u64,
    pub max_sim_time: f64,
    pub occlusion: bool,
    /// Probability that a CAV rejects a new maneuver request.
    pub rejection_probability: f64,
    pub model: DriverModel,
    pub opt: OptConfig,
    pub rollout: RolloutConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: SIM_DT,
            planner: PlannerKind::NonCooperative,
            seed: 0,
            max_sim_time: 120.0,
            occlusion: true,
            rejection_probability: 0.0,
            model: DriverModel::default(),
            opt: OptConfig::default(),
            rollout: RolloutConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn with_planner(planner: PlannerKind) -> Self {
        Self {
            planner,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    Timeout,
    Collision,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Timeout => "timeout",
            Outcome::Collision => "collision",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Arc length along the route.
    pub s: f64,
    pub lane: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrajectory {
    pub id: VehicleId,
    pub is_cav: bool,
    pub arm: Arm,
    pub slot: usize,
    pub route: RouteId,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlannerLog {
    pub cycles: u64,
    pub planner_errors: u64,
    pub max_predictions_per_cycle: usize,
    pub max_candidates_per_cycle: usize,
    pub maneuvers_issued: u64,
    pub requests: u64,
    pub rejections: u64,
    pub aborts: u64,
    /// Waypoints crossed before their `t_min`.
    pub tmin_violations: u64,
    /// Waypoints crossed after their `t_max`.
    pub tmax_misses: u64,
    /// Issued waypoints with `t_min > t_max`.
    pub window_violations: u64,
    /// Issued pred/succ references without a matching counterpart.
    pub mutual_violations: u64,
    pub stale_after_abort: u64,
    pub accepted: Vec<Maneuver>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub planner: PlannerKind,
    pub outcome: Outcome,
    pub end_time: f64,
    pub trajectories: Vec<VehicleTrajectory>,
    /// Vehicles per conflict zone, sorted by entry time.
    pub crossing_order: BTreeMap<usize, Vec<VehicleId>>,
    pub log: PlannerLog,
}

impl ScenarioResult {
    /// Trajectory log: `t,vehicle_id,is_cav,lane,s,x,y,v,a`.
    pub fn trajectory_csv(&self, map: &LaneMap) -> String {
        let mut out = String::from("t,vehicle_id,is_cav,lane,s,x,y,v,a\n");
        let n = self.trajectories.first().map_or(0, |t| t.samples.len());
        for k in 0..n {
            for tr in &self.trajectories {
                let p = &tr.samples[k];
                let _ = writeln!(
                    out,
                    "{:.2},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                    p.t,
                    tr.id,
                    tr.is_cav as u8,
                    map.lane(p.lane).id,
                    p.s,
                    p.x,
                    p.y,
                    p.v,
                    p.a
                );
            }
        }
        out
    }

    pub fn trajectory(&self, id: VehicleId) -> Option<&VehicleTrajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }
}

/// Priority pairs implied by the pred/succ links of active maneuvers.
pub fn execution_assignments(maneuvers: &BTreeMap<VehicleId, Maneuver>) -> PriorityAssignmentSet {
    let mut p = PriorityAssignmentSet::new();
    for m in maneuvers.values() {
        for w in &m.waypoints {
            if let Some(i) = w.pred {
                let _ = p.insert(i, m.vehicle);
            }
            if let Some(j) = w.succ {
                let _ = p.insert(m.vehicle, j);
            }
        }
    }
    p
}

/// Counts references whose counterpart is missing from the maneuver set.
pub fn unmatched_links(maneuvers: &[Maneuver]) -> u64 {
    let has = |v: VehicleId, pred: Option<VehicleId>, succ: Option<VehicleId>| {
        maneuvers
            .iter()
            .filter(|m| m.vehicle == v)
            .flat_map(|m| &m.waypoints)
            .any(|w| (pred.is_some() && w.pred == pred) || (succ.is_some() && w.succ == succ))
    };
    let mut bad = 0;
    for m in maneuvers {
        for w in &m.waypoints {
            if let Some(i) = w.pred {
                bad += !has(i, None, Some(m.vehicle)) as u64;
            }
            if let Some(j) = w.succ {
                bad += !has(j, Some(m.vehicle), None) as u64;
            }
        }
    }
    bad
}

pub struct Simulation<'m> {
    map: &'m LaneMap,
    cfg: SimConfig,
    scenario: Scenario,
    jm: JointModel<'m>,
    planner_jm: JointModel<'m>,
    agents: Vec<Agent>,
    step: u64,
    maneuvers: BTreeMap<VehicleId, Maneuver>,
    opt_state: PlannerState,
    policy: HeuristicPolicy,
    last_plan: f64,
    replan_event: bool,
    abort_check: bool,
    rng: ChaCha8Rng,
    trajectories: Vec<VehicleTrajectory>,
    recorder: TraceRecorder,
    log: PlannerLog,
    outcome: Option<Outcome>,
    em: EnvironmentModel,
}

impl<'m> Simulation<'m> {
    pub fn new(scenario: &Scenario, map: &'m LaneMap, cfg: SimConfig) -> Self {
        let all_hdv = cfg.planner == PlannerKind::AllHdv;
        let agents: Vec<Agent> = (0..scenario.vehicles.len())
            .map(|k| {
                let is_cav = scenario.vehicles[k].is_cav && !all_hdv;
                Agent::new(scenario.vehicle_id(k), is_cav, scenario.route(k, map), scenario.spawn_s(k, map), SPAWN_SPEED)
            })
            .collect();
        let jm = JointModel::new(
            map,
            JointConfig {
                cooperative: cfg.planner.cooperative(),
                occlusion: cfg.occlusion,
                model: cfg.model.clone(),
            },
        );
        let planner_jm = match cfg.planner {
            PlannerKind::Rollout => JointModel::new(
                map,
                JointConfig {
                    cooperative: true,
                    occlusion: cfg.rollout.occlusion,
                    model: cfg.rollout.model.clone(),
                },
            ),
            _ => crate::planner_opt::joint_model(map, &cfg.opt),
        };
        let trajectories = agents
            .iter()
            .enumerate()
            .map(|(k, a)| VehicleTrajectory {
                id: a.id,
                is_cav: a.is_cav,
                arm: scenario.vehicles[k].arm,
                slot: scenario.vehicles[k].slot,
                route: a.route,
                samples: Vec::new(),
            })
            .collect();
        let cap = (cfg.max_sim_time / cfg.dt).ceil() as usize + 1;
        let mut sim = Self {
            map,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            recorder: TraceRecorder::new(&agents, cfg.dt, cap),
            cfg,
            scenario: scenario.clone(),
            jm,
            planner_jm,
            agents,
            step: 0,
            maneuvers: BTreeMap::new(),
            opt_state: PlannerState::default(),
            policy: HeuristicPolicy::new(),
            last_plan: f64::NEG_INFINITY,
            replan_event: false,
            abort_check: false,
            trajectories,
            log: PlannerLog::default(),
            outcome: None,
            em: EnvironmentModel::empty(0.0),
        };
        sim.em = sim.snapshot();
        sim.record();
        sim.check_termination();
        sim
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn maneuvers(&self) -> &BTreeMap<VehicleId, Maneuver> {
        &self.maneuvers
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn log(&self) -> &PlannerLog {
        &self.log
    }

    /// The planners' view: human drivers are reported without their route.
    pub fn environment(&self) -> EnvironmentModel {
        self.em.clone()
    }

    fn snapshot(&self) -> EnvironmentModel {
        let vehicles = self
            .agents
            .iter()
            .map(|a| {
                let mut v = VehicleState::on_route(self.map, a.id, a.route, a.s, a.v, a.is_cav);
                v.accel = a.a;
                v
            })
            .collect();
        EnvironmentModel::new(self.time(), vehicles).expect("agent ids are unique")
    }

    fn record(&mut self) {
        let t = self.time();
        for (tr, a) in self.trajectories.iter_mut().zip(&self.agents) {
            let pose = self.map.route_pose(a.route, a.s);
            tr.samples.push(Sample {
                t,
                s: a.s,
                lane: self.map.route_lane_at(a.route, a.s).0,
                x: pose.position.x,
                y: pose.position.y,
                v: a.v,
                a: a.a,
            });
        }
        let deltas = vec![1; self.agents.len()];
        self.recorder.record(self.map, t, &self.agents, &deltas);
    }

    /// Vehicles the planners can see (those not yet past the end marker).
    fn planner_agents(&self) -> Option<Vec<Agent>> {
        let em = self.environment();
        match agents_from_em(&em, self.map) {
            Ok(mut agents) => {
                for (pa, a) in agents.iter_mut().zip(&self.agents) {
                    pa.departed |= a.departed;
                }
                Some(agents)
            }
            Err(_) => None,
        }
    }

    fn run_planner(&mut self) {
        let now = self.time();
        let issued = match self.cfg.planner {
            PlannerKind::Opt if self.step % OPT_STEPS_PER_CYCLE == 0 => {
                let Some(agents) = self.planner_agents() else {
                    self.log.planner_errors += 1;
                    return;
                };
                match plan_cycle_agents(&self.planner_jm, &agents, now, &self.opt_state, &self.cfg.opt) {
                    Ok((state, maneuvers, report)) => {
                        self.log.cycles += 1;
                        self.log.max_predictions_per_cycle = self.log.max_predictions_per_cycle.max(report.predictions);
                        self.log.max_candidates_per_cycle = self.log.max_candidates_per_cycle.max(report.candidates);
                        self.opt_state = state;
                        maneuvers
                    }
                    Err(_) => {
                        self.log.planner_errors += 1;
                        return;
                    }
                }
            }
            PlannerKind::Rollout if replanning_schedule(now, self.last_plan, self.replan_event) => {
                self.replan_event = false;
                self.last_plan = now;
                let Some(agents) = self.planner_agents() else {
                    self.log.planner_errors += 1;
                    return;
                };
                let live: Vec<Agent> = agents.into_iter().filter(|a| !a.departed).collect();
                match rollout_agents(&self.planner_jm, live, now, &mut self.policy, &self.cfg.rollout) {
                    Ok(outcome) => {
                        self.log.cycles += 1;
                        self.log.max_predictions_per_cycle = self.log.max_predictions_per_cycle.max(1);
                        outcome.maneuvers
                    }
                    Err(_) => {
                        self.log.planner_errors += 1;
                        return;
                    }
                }
            }
            _ => return,
        };
        self.apply(issued, now);
    }

    /// Sends new maneuvers; any rejection aborts all maneuvers and resets
    /// the planner.
    fn apply(&mut self, issued: Vec<Maneuver>, now: f64) {
        self.log.maneuvers_issued += issued.len() as u64;
        self.log.window_violations += issued
            .iter()
            .flat_map(|m| &m.waypoints)
            .filter(|w| w.t_min > w.t_max + TIME_EPS)
            .count() as u64;
        self.log.mutual_violations += unmatched_links(&issued);

        let mut rejected = false;
        for m in &issued {
            let changed = self
                .maneuvers
                .get(&m.vehicle)
                .is_none_or(|old| old.structure() != m.structure());
            // updated windows must still be reachable; only new requests
            // face the random rejection
            if !self.feasible(m, now) {
                rejected = true;
            }
            if changed {
                self.log.requests += 1;
                if self.cfg.rejection_probability > 0.0 && self.rng.gen_bool(self.cfg.rejection_probability) {
                    rejected = true;
                }
            }
        }
        if rejected {
            self.log.rejections += 1;
            self.abort();
            return;
        }
        for m in &issued {
            let changed = self
                .maneuvers
                .get(&m.vehicle)
                .is_none_or(|old| old.structure() != m.structure());
            if changed {
                self.log.accepted.push(m.clone());
            }
        }
        self.maneuvers = issued.into_iter().map(|m| (m.vehicle, m)).collect();
    }

    fn feasible(&self, m: &Maneuver, now: f64) -> bool {
        let Some(a) = self.agents.iter().find(|a| a.id == m.vehicle) else {
            return false;
        };
        m.waypoints
            .iter()
            .all(|w| ArrivalLimit { s: w.s, t_min: w.t_min }.feasible(a.s, a.v, now))
    }

    fn abort(&mut self) {
        self.log.aborts += 1;
        self.maneuvers.clear();
        self.opt_state = PlannerState {
            cycle_index: self.opt_state.cycle_index,
            ..PlannerState::default()
        };
        self.policy = HeuristicPolicy::new();
        self.replan_event = true;
        self.abort_check = true;
    }

    /// Advances the simulation by one step.
    pub fn step(&mut self) {
        if self.outcome.is_some() {
            return;
        }
        if std::mem::take(&mut self.abort_check) && !self.maneuvers.is_empty() {
            self.log.stale_after_abort += 1;
        }
        let now = self.time();
        if self.cfg.planner.cooperative() {
            self.run_planner();
        }

        let none = PriorityAssignmentSet::new();
        let p_exec = execution_assignments(&self.maneuvers);
        let mut accels = vec![0.0; self.agents.len()];
        for (i, a) in self.agents.iter().enumerate() {
            accels[i] = if a.is_cav && self.cfg.planner.cooperative() {
                let limits: Vec<ArrivalLimit> = self
                    .maneuvers
                    .get(&a.id)
                    .map(|m| {
                        m.waypoints
                            .iter()
                            .map(|w| ArrivalLimit { s: w.s, t_min: w.t_min })
                            .collect()
                    })
                    .unwrap_or_default();
                self.jm.command(&self.agents, i, &p_exec, &limits, now).accel
            } else {
                self.jm.command(&self.agents, i, &none, &[], now).accel
            };
        }
        let before: Vec<f64> = self.agents.iter().map(|a| a.s).collect();
        self.jm.integrate(&mut self.agents, &accels, self.cfg.dt);
        self.step += 1;
        let after = self.time();

        let next = self.snapshot();
        self.em.update(next, self.map).expect("clock is monotone");
        self.retire_waypoints(&before, now, after);
        self.record();
        self.check_collision();
        self.check_termination();
    }

    fn retire_waypoints(&mut self, before: &[f64], t0: f64, t1: f64) {
        for (k, a) in self.agents.iter().enumerate() {
            let Some(m) = self.maneuvers.get_mut(&a.id) else { continue };
            let (s0, s1) = (before[k], a.s);
            m.waypoints.retain(|w| {
                if s1 < w.s {
                    return true;
                }
                let t = if s1 > s0 { t0 + (w.s - s0) / (s1 - s0) * (t1 - t0) } else { t1 };
                if t < w.t_min - TIME_EPS {
                    self.log.tmin_violations += 1;
                }
                if t > w.t_max + TIME_EPS {
                    self.log.tmax_misses += 1;
                }
                false
            });
        }
        self.maneuvers.retain(|_, m| !m.waypoints.is_empty());
    }

    fn check_collision(&mut self) {
        let map = self.map;
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                let (a, b) = (&self.agents[i], &self.agents[j]);
                if a.departed || b.departed {
                    continue;
                }
                let zone_hit = map.route_zones(a.route, b.route).iter().any(|z| {
                    a.s > z.entry_a && a.s - VEHICLE_LENGTH < z.exit_a && b.s > z.entry_b && b.s - VEHICLE_LENGTH < z.exit_b
                });
                let overlap = self
                    .jm
                    .position_on(b, a.route)
                    .map(|pb| pb - a.s)
                    .or_else(|| self.jm.position_on(a, b.route).map(|pa| b.s - pa))
                    .is_some_and(|d| d.abs() < VEHICLE_LENGTH);
                if zone_hit || overlap {
                    self.outcome = Some(Outcome::Collision);
                    return;
                }
            }
        }
    }

    fn check_termination(&mut self) {
        if self.outcome.is_some() {
            return;
        }
        let done = self
            .agents
            .iter()
            .all(|a| a.departed || a.s >= self.map.route(a.route).exit_s() + END_MARKER);
        if done {
            self.outcome = Some(Outcome::Completed);
        } else if self.time() >= self.cfg.max_sim_time - TIME_EPS {
            self.outcome = Some(Outcome::Timeout);
        }
    }

    pub fn run(mut self) -> ScenarioResult {
        while self.outcome.is_none() {
            self.step();
        }
        self.finish()
    }

    pub fn finish(self) -> ScenarioResult {
        let end_time = self.time();
        let trace = self.recorder.finish(self.map, &PriorityAssignmentSet::new());
        ScenarioResult {
            scenario_id: self.scenario.id.clone(),
            planner: self.cfg.planner,
            outcome: self.outcome.unwrap_or(Outcome::Timeout),
            end_time,
            trajectories: self.trajectories,
            crossing_order: crossing_order(&trace),
            log: self.log,
        }
    }
}

/// Runs one scenario to completion, collision or timeout.
pub fn run_scenario(scenario: &Scenario, map: &LaneMap, cfg: &SimConfig) -> ScenarioResult {
    Simulation::new(scenario, map, cfg.clone()).run()
}
