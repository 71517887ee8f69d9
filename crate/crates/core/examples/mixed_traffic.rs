//! The showcase scene with the minor-road vehicle driven by a human. The
//! planners can still let the east vehicle turn ahead of the north vehicle,
//! but the human driver keeps to the priority rules and creeps up to the
//! occluded stop line.

use coop_maneuver::evaluation::scenarios::Scenario;
use coop_maneuver::map::build_lehr_junction;
use coop_maneuver::sim::{run_scenario, PlannerKind, SimConfig};

fn main() {
    let map = build_lehr_junction();
    let mut scenario = Scenario::showcase();
    scenario.id = "showcase-mixed".into();
    scenario.vehicles[1].is_cav = false;
    println!("{}\n", scenario.manifest_line());
    for planner in [PlannerKind::NonCooperative, PlannerKind::Opt, PlannerKind::Rollout] {
        let result = run_scenario(&scenario, &map, &SimConfig::with_planner(planner));
        println!("{}: {} after {:.1} s", planner.name(), result.outcome.name(), result.end_time);
        for (zone, ids) in &result.crossing_order {
            let ids: Vec<String> = ids.iter().map(|i| format!("v{i}")).collect();
            println!("  zone {zone}: {}", ids.join(" -> "));
        }
        for tr in &result.trajectories {
            let entry = map.route(tr.route).entry_s();
            let approach = tr.samples.iter().filter(|p| p.s > entry - 15.0 && p.s < entry);
            let slowest = approach.map(|p| p.v).fold(f64::INFINITY, f64::min);
            let crossed = tr.samples.iter().find(|p| p.s >= entry).map(|p| p.t);
            println!(
                "  v{} ({}): slowest {:.1} m/s in the last 15 m, enters at {}",
                tr.id,
                if tr.is_cav { "cav" } else { "hdv" },
                slowest,
                crossed.map_or("-".into(), |t| format!("{t:.1} s"))
            );
        }
    }
}
