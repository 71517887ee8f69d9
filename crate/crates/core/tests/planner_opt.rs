mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coop_maneuver::environment::{EnvironmentModel, VehicleId};
use coop_maneuver::evaluation::scenarios::{sample_random_scenarios, Scenario, ScenarioSource};
use coop_maneuver::joint::Agent;
use coop_maneuver::map::{build_lehr_junction, Arm, LaneMap};
use coop_maneuver::planner_opt::{
    derive_waypoints, enumerate_extensions, evaluate, joint_model, open_cav_pairs, plan_cycle, plan_cycle_agents,
    Maneuver, OptConfig, PlannerState, CANDIDATE_LIMIT,
};
use coop_maneuver::prediction::{
    agents_from_em, validate, Occupancy, PendingZone, PredictionTrace, PriorityAssignmentSet,
};
use coop_maneuver::sim::{PlannerKind, SimConfig, Simulation};

fn junction() -> &'static LaneMap {
    static MAP: OnceLock<LaneMap> = OnceLock::new();
    MAP.get_or_init(build_lehr_junction)
}

fn serial() -> OptConfig {
    OptConfig {
        parallel: false,
        ..OptConfig::default()
    }
}

/// One CAV on each of up to three arms with random routes, distances and
/// speeds.
fn small_instance(rng: &mut ChaCha8Rng) -> Vec<Agent> {
    let map = junction();
    let mut agents = Vec::new();
    for (k, arm) in Arm::ALL.into_iter().enumerate() {
        if rng.gen_bool(0.25) {
            continue;
        }
        let routes = map.routes_from(arm);
        let route = routes[rng.gen_range(0..routes.len())];
        let d = rng.gen_range(8.0..55.0);
        let v = rng.gen_range(3.0..9.0);
        agents.push(Agent::new(VehicleId(k as u32), true, route, map.route(route).entry_s() - d, v));
    }
    agents
}

#[test]
fn small_instances_match_exhaustive_search() {
    let map = junction();
    let cfg = serial();
    let jm = joint_model(map, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 50 {
        let agents = small_instance(&mut rng);
        let open = open_cav_pairs(&agents, &jm);
        if open.is_empty() {
            continue;
        }
        checked += 1;
        let (state, _, report) = plan_cycle_agents(&jm, &agents, 0.0, &PlannerState::default(), &cfg).unwrap();
        assert!(report.candidates <= CANDIDATE_LIMIT);
        let oracle = common::exhaustive_search(&jm, &agents, &open, &cfg.prediction);
        match oracle {
            Some(best) => {
                assert_eq!(report.candidates, best.evaluated, "{agents:?}");
                assert_eq!(state.p_current, best.p, "{agents:?}");
                assert!((report.selected_efficiency - best.efficiency).abs() < 1e-12);
            }
            None => assert!(state.p_current.is_empty()),
        }
        let chosen = evaluate(&jm, &agents, &state.p_current, &cfg.prediction);
        let empty = evaluate(&jm, &agents, &PriorityAssignmentSet::new(), &cfg.prediction);
        if !state.p_current.is_empty() {
            assert!(chosen.valid);
        }
        if empty.valid {
            assert!(chosen.efficiency >= empty.efficiency);
        }
    }
}

fn check_links(maneuvers: &[Maneuver]) {
    let by_id: BTreeMap<VehicleId, &Maneuver> = maneuvers.iter().map(|m| (m.vehicle, m)).collect();
    for m in maneuvers {
        for w in m.waypoints.windows(2) {
            assert!(w[0].s <= w[1].s);
            assert!(w[0].t_min <= w[1].t_min && w[0].t_max <= w[1].t_max);
        }
        for w in &m.waypoints {
            assert!(w.t_min <= w.t_max);
            if let Some(pred) = w.pred {
                let other = by_id.get(&pred).expect("predecessor has a maneuver");
                assert!(other.waypoints.iter().any(|x| x.succ == Some(m.vehicle)));
            }
            if let Some(succ) = w.succ {
                let other = by_id.get(&succ).expect("successor has a maneuver");
                assert!(other.waypoints.iter().any(|x| x.pred == Some(m.vehicle)));
            }
        }
    }
}

#[test]
fn random_cycles_yield_consistent_waypoints() {
    let map = junction();
    let cfg = serial();
    let jm = joint_model(map, &cfg);
    for s in sample_random_scenarios(60, 17, map) {
        let em = Simulation::new(&s, map, SimConfig::with_planner(PlannerKind::Opt)).environment();
        let agents = agents_from_em(&em, map).unwrap();
        let (state, maneuvers, report) = plan_cycle_agents(&jm, &agents, 3.0, &PlannerState::default(), &cfg).unwrap();
        assert!(report.candidates <= CANDIDATE_LIMIT && report.predictions <= CANDIDATE_LIMIT);
        check_links(&maneuvers);
        for m in &maneuvers {
            let a = agents.iter().find(|a| a.id == m.vehicle).unwrap();
            assert!(a.is_cav);
            for w in &m.waypoints {
                let on_route = map.route_pose(a.route, w.s).position;
                assert!(on_route.distance(w.p) < 1e-9);
            }
        }
        if !state.p_current.is_empty() {
            let chosen = evaluate(&jm, &agents, &state.p_current, &cfg.prediction);
            assert!(validate(&chosen.trace, &state.p_current).valid);
            assert!(state.p_current.iter().all(|(i, j)| {
                let cav = |id| agents.iter().any(|a| a.id == id && a.is_cav);
                cav(i) && cav(j)
            }));
        }
    }
}

#[test]
fn showcase_gives_the_north_vehicle_way() {
    let map = junction();
    let em = Simulation::new(&Scenario::showcase(), map, SimConfig::with_planner(PlannerKind::Opt)).environment();
    let (state, maneuvers, report) = plan_cycle(&em, &PlannerState::default(), &serial(), map).unwrap();
    assert!(state.p_current.contains(VehicleId(0), VehicleId(2)));
    assert!(state.p_current.contains(VehicleId(1), VehicleId(2)));
    assert!(report.selected_efficiency > report.empty_efficiency);
    check_links(&maneuvers);
}

#[test]
fn empty_scene_and_lone_vehicle_plan_nothing() {
    let map = junction();
    let (state, m, _) = plan_cycle(&EnvironmentModel::empty(0.0), &PlannerState::default(), &serial(), map).unwrap();
    assert!(state.p_current.is_empty() && m.is_empty());
    let lone = Scenario::from_arms("lone", ScenarioSource::Random, &[(Arm::West, vec![Arm::North])], true);
    let em = Simulation::new(&lone, map, SimConfig::with_planner(PlannerKind::Opt)).environment();
    let (state, m, report) = plan_cycle(&em, &PlannerState::default(), &serial(), map).unwrap();
    assert!(state.p_current.is_empty() && m.is_empty());
    assert_eq!(report.predictions, 0);
}

#[test]
fn entry_waypoint_follows_the_leave_time_plus_margin() {
    let map = junction();
    let cfg = serial();
    let jm = joint_model(map, &cfg);
    let ew = map.find_route(Arm::East, Arm::West).unwrap();
    let ne = map.find_route(Arm::North, Arm::East).unwrap();
    let rz = map.route_zones(ne, ew)[0];
    let agents = vec![
        Agent::new(VehicleId(1), true, ne, 90.0, 8.0),
        Agent::new(VehicleId(2), true, ew, 90.0, 8.0),
    ];
    let lane_of = |route, s| map.route_lane_at(route, s).0;
    let la = lane_of(ne, rz.entry_a + 0.01);
    let lb = lane_of(ew, rz.entry_b + 0.01);
    let trace = PredictionTrace {
        dt: 0.1,
        times: vec![0.0],
        vehicles: Vec::new(),
        occupancy: vec![
            Occupancy { zone: rz.zone, vehicle: VehicleId(1), lane: la, t_enter: 3.0, t_leave: Some(5.0) },
            Occupancy { zone: rz.zone, vehicle: VehicleId(2), lane: lb, t_enter: 6.0, t_leave: Some(8.0) },
        ],
        pending: vec![
            PendingZone { zone: rz.zone, vehicle: VehicleId(1), lane: la, start: rz.entry_a, end: rz.exit_a },
            PendingZone { zone: rz.zone, vehicle: VehicleId(2), lane: lb, start: rz.entry_b, end: rz.exit_b },
        ],
        collision: false,
        order_violation: false,
    };
    let p = PriorityAssignmentSet::from_pairs([(VehicleId(1), VehicleId(2))]).unwrap();
    let m = derive_waypoints(&trace, &p, &jm, &agents, 0.0, 0.5, 15.0).unwrap();
    let yielding = m.iter().find(|m| m.vehicle == VehicleId(2)).unwrap();
    assert_eq!(yielding.waypoints.len(), 1);
    assert!((yielding.waypoints[0].t_min - 5.5).abs() < 1e-12);
    assert_eq!(yielding.waypoints[0].pred, Some(VehicleId(1)));
    assert!((yielding.waypoints[0].s - rz.entry_b).abs() < 1e-12);
    let first = m.iter().find(|m| m.vehicle == VehicleId(1)).unwrap();
    assert_eq!(first.waypoints[0].succ, Some(VehicleId(2)));
    assert!((first.waypoints[0].t_max - 5.0).abs() < 1e-12);
    assert!(derive_waypoints(&trace, &PriorityAssignmentSet::new(), &jm, &agents, 0.0, 0.5, 15.0).unwrap().is_empty());
}

#[test]
fn extension_counts() {
    let v = VehicleId;
    let none = PriorityAssignmentSet::new();
    assert_eq!(enumerate_extensions(&none, &[(v(1), v(2))], CANDIDATE_LIMIT).len(), 3);
    let twenty: Vec<_> = (0..20).map(|k| (v(2 * k), v(2 * k + 1))).collect();
    let c = enumerate_extensions(&none, &twenty, CANDIDATE_LIMIT);
    assert_eq!(c.len(), 41);
    assert!(c.iter().all(|p| p.len() <= 1));
}

#[test]
fn eight_vehicle_cycle_latency() {
    let map = junction();
    let cfg = serial();
    let jm = joint_model(map, &cfg);
    let mut worst: f64 = 0.0;
    for s in sample_random_scenarios(400, 9, map).into_iter().filter(|s| s.vehicles.len() == 8).take(5) {
        let em = Simulation::new(&s, map, SimConfig::with_planner(PlannerKind::Opt)).environment();
        let agents = agents_from_em(&em, map).unwrap();
        let t = Instant::now();
        let (_, _, report) = plan_cycle_agents(&jm, &agents, 0.0, &PlannerState::default(), &cfg).unwrap();
        let dt = t.elapsed().as_secs_f64();
        eprintln!("{} predictions in {:.1} ms", report.predictions, dt * 1e3);
        worst = worst.max(dt);
    }
    assert!(worst < 0.2, "slowest cycle {:.0} ms", worst * 1e3);
}
