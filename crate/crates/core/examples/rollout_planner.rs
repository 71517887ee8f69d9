//! The rollout planner on the showcase scene: the graph scene
//! representation handed to the policy, one rollout with the built-in
//! heuristic policy, and the waypoints extracted from it.

use coop_maneuver::evaluation::scenarios::Scenario;
use coop_maneuver::map::build_lehr_junction;
use coop_maneuver::planner_opt::maneuvers_to_json_lines;
use coop_maneuver::planner_rollout::{build_scene_graph, rollout_plan, HeuristicPolicy, RolloutConfig};
use coop_maneuver::sim::{PlannerKind, SimConfig, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = build_lehr_junction();
    let scenario = Scenario::showcase();
    let em = Simulation::new(&scenario, &map, SimConfig::with_planner(PlannerKind::Rollout)).environment();

    let graph = build_scene_graph(&em, &map)?;
    println!("scene graph:\n{}", graph.dump());

    let mut policy = HeuristicPolicy::new();
    let start = std::time::Instant::now();
    let out = rollout_plan(&em, &mut policy, &map, &RolloutConfig::default())?;
    println!(
        "rollout covered {:.1} s of simulated time in {:.1?}{}",
        out.sim_time,
        start.elapsed(),
        if out.timed_out { " (timed out)" } else { "" }
    );
    let pairs: Vec<String> = out.assignments.iter().map(|(i, j)| format!("<v{i}, v{j}>")).collect();
    println!("crossing order realised in the rollout: {{{}}}", pairs.join(", "));
    print!("{}", maneuvers_to_json_lines(&out.maneuvers));
    Ok(())
}
