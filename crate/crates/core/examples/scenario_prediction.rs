//! Predicts the showcase scene under the priority rules and under a
//! cooperative priority assignment, and scores both.

use coop_maneuver::environment::VehicleId;
use coop_maneuver::evaluation::scenarios::Scenario;
use coop_maneuver::map::build_lehr_junction;
use coop_maneuver::prediction::{
    crossing_order, efficiency, predict, validate, PredictionConfig, PredictionTrace, PriorityAssignmentSet,
};
use coop_maneuver::sim::{PlannerKind, SimConfig, Simulation};

fn show(label: &str, trace: &PredictionTrace, p: &PriorityAssignmentSet, cfg: &PredictionConfig) {
    let check = validate(trace, p);
    println!("{label}");
    println!("  efficiency {:.3}  valid {}", efficiency(trace, p, cfg), check.valid);
    for reason in &check.reasons {
        println!("  invalid: {reason:?}");
    }
    for (zone, ids) in crossing_order(trace) {
        let ids: Vec<String> = ids.iter().map(|i| format!("v{i}")).collect();
        println!("  zone {zone}: {}", ids.join(" -> "));
    }
    for occ in &trace.occupancy {
        println!(
            "    v{} in zone {} from {:.1} s to {}",
            occ.vehicle,
            occ.zone,
            occ.t_enter,
            occ.t_leave.map_or("end".into(), |t| format!("{t:.1} s"))
        );
    }
    for series in &trace.vehicles {
        let stopped = series.v.iter().any(|&v| v < 0.1);
        println!("  v{} final speed {:.1} m/s{}", series.id, series.v.last().unwrap_or(&0.0), if stopped { ", stops" } else { "" });
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = build_lehr_junction();
    let scenario = Scenario::showcase();
    let em = Simulation::new(&scenario, &map, SimConfig::with_planner(PlannerKind::Opt)).environment();
    let cfg = PredictionConfig::default();
    let model = Default::default();

    let rules = PriorityAssignmentSet::new();
    show("priority rules:", &predict(&em, &rules, &cfg, &map, &model)?, &rules, &cfg);

    // v2 (north, right of way) lets both v0 and v1 go first.
    let coop = PriorityAssignmentSet::from_pairs([(VehicleId(0), VehicleId(2)), (VehicleId(1), VehicleId(2))])?;
    println!();
    show("v2 gives way to v0 and v1:", &predict(&em, &coop, &cfg, &map, &model)?, &coop, &cfg);
    Ok(())
}
