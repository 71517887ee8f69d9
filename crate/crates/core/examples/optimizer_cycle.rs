//! Runs optimizer planning cycles on the showcase scene: the selected
//! priority assignments, the cycle statistics, and the waypoint messages
//! sent to the vehicles.

use coop_maneuver::evaluation::scenarios::Scenario;
use coop_maneuver::map::build_lehr_junction;
use coop_maneuver::planner_opt::{maneuvers_to_json_lines, plan_cycle, OptConfig, PlannerState};
use coop_maneuver::sim::{PlannerKind, SimConfig, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = build_lehr_junction();
    let scenario = Scenario::showcase();
    let cfg = OptConfig::default();
    let mut sim = Simulation::new(&scenario, &map, SimConfig::with_planner(PlannerKind::NonCooperative));
    let mut state = PlannerState::default();
    // Plan on snapshots one second apart while the vehicles keep driving
    // without cooperation, so each cycle starts from a fresh scene.
    for _ in 0..3 {
        let em = sim.environment();
        let start = std::time::Instant::now();
        let (next, maneuvers, report) = plan_cycle(&em, &state, &cfg, &map)?;
        println!(
            "t = {:.1} s: {} predictions, {} candidates, {:.1?}",
            em.timestamp,
            report.predictions,
            report.candidates,
            start.elapsed()
        );
        println!(
            "  efficiency: empty {:.3}, previous {:.3}, selected {:.3}{}",
            report.empty_efficiency,
            report.base_efficiency,
            report.selected_efficiency,
            if report.reset { " (reset)" } else { "" }
        );
        let pairs: Vec<String> = next.p_current.iter().map(|(i, j)| format!("<v{i}, v{j}>")).collect();
        println!("  priority assignments: {{{}}}", pairs.join(", "));
        print!("{}", maneuvers_to_json_lines(&maneuvers));
        state = next;
        for _ in 0..20 {
            sim.step();
        }
    }
    Ok(())
}
