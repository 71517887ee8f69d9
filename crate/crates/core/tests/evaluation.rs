mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;

use coop_maneuver::environment::VehicleId;
use coop_maneuver::evaluation::metrics::{compute_metrics, deviates, vehicle_metrics, RunSummary, CLIP_START, V_STOP};
use coop_maneuver::evaluation::reward::{reward_score, RewardWeights};
use coop_maneuver::evaluation::scenarios::{
    assign_mixed, enumerate_scenarios, sample_random_scenarios, MAX_PER_ARM_RANDOM, MAX_VEHICLES,
};
use coop_maneuver::map::{build_lehr_junction, Arm, LaneMap};
use coop_maneuver::sim::{run_scenario, Outcome, PlannerKind, ScenarioResult, SimConfig, END_MARKER};

fn junction() -> &'static LaneMap {
    static MAP: OnceLock<LaneMap> = OnceLock::new();
    MAP.get_or_init(build_lehr_junction)
}

#[test]
fn enumeration_matches_brute_force() {
    let map = junction();
    let got = enumerate_scenarios(map);
    assert_eq!(got.len(), 280);
    let keys: BTreeSet<Vec<String>> = got
        .iter()
        .map(|s| {
            let mut k: Vec<String> = s.vehicles.iter().map(|v| format!("{}:{}:{}", v.arm.letter(), v.slot, v.target.letter())).collect();
            k.sort();
            k
        })
        .collect();
    assert_eq!(keys.len(), 280, "duplicates");
    assert_eq!(keys, common::enumeration_oracle(map));
    assert!(got.iter().all(|s| s.vehicles.iter().all(|v| v.is_cav)));
}

#[test]
fn random_scenarios_respect_the_caps() {
    let map = junction();
    assert!(sample_random_scenarios(0, 1, map).is_empty());
    let all = sample_random_scenarios(500, 12, map);
    assert_eq!(all, sample_random_scenarios(500, 12, map));
    for s in &all {
        assert!((1..=MAX_VEHICLES).contains(&s.vehicles.len()));
        for arm in Arm::ALL {
            assert!(s.count_on(arm) <= MAX_PER_ARM_RANDOM);
        }
        for v in &s.vehicles {
            assert_ne!(v.arm, v.target);
        }
    }
    let ids: BTreeSet<&str> = all.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids.len(), all.len());
}

#[test]
fn mixed_assignment_is_floor_or_ceil() {
    let map = junction();
    let all = sample_random_scenarios(400, 21, map);
    for n in 1..=MAX_VEHICLES {
        let of_n: Vec<_> = all.iter().filter(|s| s.vehicles.len() == n).collect();
        assert!(!of_n.is_empty(), "no scenario with {n} vehicles");
        let mut counts = BTreeSet::new();
        for s in of_n {
            let m = assign_mixed(s, 0.5, 4);
            let cav = m.vehicles.iter().filter(|v| v.is_cav).count();
            assert!(cav == n / 2 || cav == n.div_ceil(2), "{n}: {cav}");
            counts.insert(cav);
            // only the flag changes
            for (a, b) in s.vehicles.iter().zip(&m.vehicles) {
                assert_eq!((a.arm, a.slot, a.target), (b.arm, b.slot, b.target));
            }
        }
        if n % 2 == 1 && counts.len() == 1 {
            eprintln!("only one rounding seen for n = {n}");
        }
    }
    let s = &all[0];
    assert!(assign_mixed(s, 0.0, 4).vehicles.iter().all(|v| !v.is_cav));
}

fn some_runs() -> &'static Vec<(PlannerKind, ScenarioResult)> {
    static RUNS: OnceLock<Vec<(PlannerKind, ScenarioResult)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let map = junction();
        let mut out = Vec::new();
        for (k, s) in sample_random_scenarios(8, 31, map).into_iter().enumerate() {
            let s = if k % 2 == 1 { assign_mixed(&s, 0.5, 2) } else { s };
            for planner in [PlannerKind::NonCooperative, PlannerKind::Rollout] {
                out.push((planner, run_scenario(&s, map, &SimConfig::with_planner(planner))));
            }
        }
        out
    })
}

#[test]
fn reward_is_linear_in_the_weights() {
    let map = junction();
    let w = RewardWeights::default();
    for (_, r) in some_runs() {
        let base = reward_score(r, map, &w);
        let doubled = reward_score(r, map, &w.scaled(2.0));
        assert!((doubled.cumulative - 2.0 * base.cumulative).abs() < 1e-9);
        let sum: f64 = base.per_step.iter().sum();
        assert!((sum - base.cumulative).abs() < 1e-9);
        for (t, r) in base.terms.iter().zip(&base.per_step) {
            assert!((t.weighted(&w) - r).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&t.velocity));
            assert!(t.idle <= 0.0 && t.reluctance <= 0.0 && t.proximity <= 0.0 && t.collision <= 0.0);
        }
        let zero = RewardWeights { velocity: 0.0, idle: 0.0, reluctance: 0.0, proximity: 0.0, collision: 0.0 };
        assert_eq!(reward_score(r, map, &zero).cumulative, 0.0);
    }
}

#[test]
fn baseline_against_itself_never_deviates() {
    let map = junction();
    let base: Vec<RunSummary> = some_runs()
        .iter()
        .filter(|(k, _)| *k == PlannerKind::NonCooperative)
        .map(|(_, r)| RunSummary::from_result(r, map))
        .collect();
    let report = compute_metrics(&base, &[(PlannerKind::NonCooperative, base.clone())]).unwrap();
    assert!(report.deviating_scenarios.is_empty());
    let m = &report.planners[0];
    assert_eq!(m.deviating, 0);
    assert_eq!(m.deviating_share, 0.0);
    assert!(m.relative_duration.major.is_empty() && m.relative_duration.minor.is_empty());
    assert!(base.iter().all(|r| !deviates(r, r)));
}

struct Row {
    t: f64,
    id: u32,
    s: f64,
    v: f64,
}

fn parse_csv(csv: &str) -> BTreeMap<u32, Vec<Row>> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,vehicle_id,is_cav,lane,s,x,y,v,a"));
    let mut out: BTreeMap<u32, Vec<Row>> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 9);
        let row = Row {
            t: f[0].parse().unwrap(),
            id: f[1].parse().unwrap(),
            s: f[4].parse().unwrap(),
            v: f[7].parse().unwrap(),
        };
        out.entry(row.id).or_default().push(row);
    }
    out
}

/// Time at which the series first reaches `s`, linearly interpolated.
fn time_at(rows: &[Row], s: f64) -> Option<f64> {
    let k = rows.iter().position(|r| r.s >= s)?;
    if k == 0 {
        return Some(rows[0].t);
    }
    let (a, b) = (&rows[k - 1], &rows[k]);
    Some(a.t + (s - a.s) / (b.s - a.s) * (b.t - a.t))
}

/// Duration, stop flag and mean speed recomputed from the text log alone.
fn oracle_metrics(rows: &[Row], s0: f64, s1: f64) -> (Option<f64>, bool, Option<f64>) {
    let min_v = rows.iter().filter(|r| r.s >= s0 && r.s <= s1).map(|r| r.v).fold(f64::INFINITY, f64::min);
    let dur = match (time_at(rows, s0), time_at(rows, s1)) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let start_s = rows[0].s.max(s0);
    let speed = dur.filter(|d| *d > 0.0).map(|d| (s1 - start_s) / d);
    (dur, min_v < V_STOP, speed)
}

#[test]
fn metrics_match_an_oracle_over_the_text_log() {
    let map = junction();
    let mut checked = 0;
    for (_, r) in some_runs() {
        let rows = parse_csv(&r.trajectory_csv(map));
        for tr in &r.trajectories {
            let route = map.route(tr.route);
            let (s0, s1) = (route.entry_s() - CLIP_START, route.exit_s() + END_MARKER);
            let (dur, stopped, speed) = oracle_metrics(&rows[&tr.id.0], s0, s1);
            let m = vehicle_metrics(tr, map);
            match (m.duration, dur) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-2, "{a} vs {b}"),
                (a, b) => assert_eq!(a.is_some(), b.is_some()),
            }
            // the log rounds speeds to 1e-4
            let min_v = tr.samples.iter().filter(|p| p.s >= s0 && p.s <= s1).map(|p| p.v).fold(f64::INFINITY, f64::min);
            if (min_v - V_STOP).abs() > 1e-3 && r.outcome == Outcome::Completed {
                assert_eq!(m.stopped, stopped);
            }
            if let (Some(a), Some(b)) = (m.avg_speed, speed) {
                assert!((a - b).abs() < 1e-2, "{a} vs {b}");
            }
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn crossing_order_matches_entry_times_in_the_log() {
    let map = junction();
    let mut compared = 0;
    for (_, r) in some_runs() {
        let rows = parse_csv(&r.trajectory_csv(map));
        for a in &r.trajectories {
            for b in &r.trajectories {
                if a.id >= b.id {
                    continue;
                }
                for z in map.route_zones(a.route, b.route) {
                    let (Some(ta), Some(tb)) = (time_at(&rows[&a.id.0], z.entry_a), time_at(&rows[&b.id.0], z.entry_b)) else {
                        continue;
                    };
                    // a sample interval of slack for near ties
                    if (ta - tb).abs() < 0.1 {
                        continue;
                    }
                    let order = &r.crossing_order[&z.zone];
                    let pos = |id: VehicleId| order.iter().position(|&x| x == id);
                    let (Some(pa), Some(pb)) = (pos(a.id), pos(b.id)) else {
                        // vehicles spawned inside the zone have no entry
                        continue;
                    };
                    assert_eq!(pa < pb, ta < tb, "zone {} in {}", z.zone, r.scenario_id);
                    compared += 1;
                }
            }
        }
    }
    assert!(compared > 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixed_assignment_rounds_within_one(ratio in 0.0f64..=1.0, seed in any::<u64>(), k in 0usize..200) {
        let s = sample_random_scenarios(k + 1, 9, junction()).pop().unwrap();
        let m = assign_mixed(&s, ratio, seed);
        let n = s.vehicles.len() as f64;
        let cav = m.vehicles.iter().filter(|v| v.is_cav).count() as f64;
        prop_assert!(cav >= (n * ratio).floor() && cav <= (n * ratio).ceil());
        prop_assert_eq!(assign_mixed(&s, ratio, seed), m);
    }
}
