//! Closed-loop runs of the showcase scene with every planner, compared on
//! clipped crossing durations, stops and the step reward.
//!
//! `cargo run --release --example closed_loop -- [trajectory_dir]` also
//! writes one trajectory CSV per planner.

use coop_maneuver::evaluation::metrics::vehicle_metrics;
use coop_maneuver::evaluation::reward::{reward_score, RewardWeights};
use coop_maneuver::evaluation::scenarios::Scenario;
use coop_maneuver::map::build_lehr_junction;
use coop_maneuver::sim::{run_scenario, PlannerKind, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = build_lehr_junction();
    let scenario = Scenario::showcase();
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let mut baseline = Vec::new();
    for planner in [PlannerKind::NonCooperative, PlannerKind::Opt, PlannerKind::Rollout, PlannerKind::AllHdv] {
        let start = std::time::Instant::now();
        let result = run_scenario(&scenario, &map, &SimConfig::with_planner(planner));
        let reward = reward_score(&result, &map, &RewardWeights::default());
        println!(
            "{}: {} after {:.1} s simulated ({:.1?} wall), reward {:.2}, {} maneuvers issued",
            planner.name(),
            result.outcome.name(),
            result.end_time,
            start.elapsed(),
            reward.cumulative,
            result.log.maneuvers_issued
        );
        for (zone, ids) in &result.crossing_order {
            let ids: Vec<String> = ids.iter().map(|i| format!("v{i}")).collect();
            println!("  zone {zone}: {}", ids.join(" -> "));
        }
        let metrics: Vec<_> = result.trajectories.iter().map(|tr| vehicle_metrics(tr, &map)).collect();
        for (k, m) in metrics.iter().enumerate() {
            let rel = match (m.duration, baseline.get(k).and_then(|b: &Option<f64>| *b)) {
                (Some(d), Some(b)) if planner != PlannerKind::NonCooperative => format!(" ({:+.2} s)", d - b),
                _ => String::new(),
            };
            println!(
                "  v{} from {:?}: duration {}{rel}{}",
                m.vehicle_id,
                m.arm,
                m.duration.map_or("-".into(), |d| format!("{d:.2} s")),
                if m.stopped { ", stopped" } else { "" }
            );
        }
        if planner == PlannerKind::NonCooperative {
            baseline = metrics.iter().map(|m| m.duration).collect();
        }
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("showcase_{}.csv", planner.name())), result.trajectory_csv(&map))?;
        }
    }
    Ok(())
}
