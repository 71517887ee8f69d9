//! Driver-model behaviour: an approach to the stop line with and without
//! permission to enter, gap acceptance against oncoming major-road traffic,
//! and the same observations fed through a learned acceleration model.
//!
//! `cargo run --example driver_models -- [weights.toml]`

use coop_maneuver::driver::{acceleration, gap_decision, DriverModel, MlpParameters};
use coop_maneuver::environment::{observation_on_route, VehicleId, VehicleState};
use coop_maneuver::map::{build_lehr_junction, Arm, LaneMap, RouteId};
use coop_maneuver::prediction::PriorityAssignmentSet;

const DT: f64 = 0.05;

fn approach(map: &LaneMap, route: RouteId, delta: u8, model: &DriverModel) {
    let r = map.route(route);
    let (mut s, mut v) = (r.entry_s() - 60.0, 8.0);
    println!("  {:>5} {:>8} {:>6} {:>6}", "t", "d_stop", "v", "a");
    for step in 0..=240 {
        let obs = observation_on_route(map, route, s, v, None);
        let a = acceleration(&obs, delta, model);
        if step % 20 == 0 {
            println!("  {:>5.1} {:>8.2} {:>6.2} {:>6.2}", step as f64 * DT, obs.d_stop, v, a);
        }
        v = (v + a * DT).max(0.0);
        s += v * DT;
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = build_lehr_junction();
    let analytic = DriverModel::default();
    let minor = map.find_route(Arm::West, Arm::North)?;
    let major = map.find_route(Arm::North, Arm::East)?;

    println!("minor-road approach, told to yield (delta = 0):");
    approach(&map, minor, 0, &analytic);
    println!("\nminor-road approach, cleared to enter (delta = 1):");
    approach(&map, minor, 1, &analytic);

    println!("\ngap acceptance of a minor-road vehicle 5 m before the stop line at 4 m/s");
    println!("against a major-road vehicle at 8 m/s:");
    let vi = VehicleState::on_route(&map, VehicleId(0), minor, map.route(minor).entry_s() - 5.0, 4.0, true);
    for d in [10.0, 20.0, 30.0, 40.0, 60.0, 80.0] {
        let vj = VehicleState::on_route(&map, VehicleId(1), major, map.route(major).entry_s() - d, 8.0, true);
        let none = gap_decision(&vi, &[&vj], &PriorityAssignmentSet::new(), &map, &analytic)?;
        let granted = PriorityAssignmentSet::from_pairs([(VehicleId(0), VehicleId(1))])?;
        let with = gap_decision(&vi, &[&vj], &granted, &map, &analytic)?;
        println!(
            "  major {:>4.0} m out: delta {} (priority rules), delta {} (granted priority)",
            d, none.delta, with.delta
        );
    }

    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/mlp_acc_example.toml").to_string());
    let learned = DriverModel::with_mlp(MlpParameters::load(&path)?, None)?;
    println!("\nanalytic vs learned acceleration ({path}):");
    println!("  {:>6} {:>8} {:>10} {:>9}", "v", "lead", "analytic", "learned");
    let s = map.route(major).entry_s() - 80.0;
    for (v, lead) in [(0.0, None), (5.0, None), (8.3, None), (8.0, Some((30.0, 8.0))), (8.0, Some((12.0, 2.0)))] {
        let obs = observation_on_route(&map, major, s, v, lead);
        println!(
            "  {:>6.1} {:>8} {:>10.3} {:>9.3}",
            v,
            lead.map_or("-".to_string(), |(d, vl): (f64, f64)| format!("{d:.0}@{vl:.0}")),
            acceleration(&obs, 1, &analytic),
            acceleration(&obs, 1, &learned)
        );
    }
    Ok(())
}
