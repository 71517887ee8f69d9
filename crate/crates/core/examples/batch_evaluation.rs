//! A reduced evaluation batch: a slice of the scenario set under every
//! planner, aggregated against the non-cooperative baseline and written out
//! as CSV tables and SVG charts.
//!
//! `cargo run --release --example batch_evaluation -- [out_dir] [n_scenarios]`
//! The full batch is what the `coop-maneuver run` / `report` commands do.

use std::path::PathBuf;

use coop_maneuver::evaluation::batch::{batch_scenarios, run_batch, Traffic};
use coop_maneuver::evaluation::metrics::{compute_metrics, median};
use coop_maneuver::evaluation::plot::{plot_boxes, plot_deviation, plot_stops};
use coop_maneuver::evaluation::report::{
    read_deviation, read_samples, read_stops, write_report, write_run_summaries,
};
use coop_maneuver::map::build_lehr_junction;
use coop_maneuver::sim::{PlannerKind, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("coop-batch"), PathBuf::from);
    let n: usize = args.next().map_or(Ok(60), |s| s.parse())?;
    let map = build_lehr_junction();
    // Every fourth scenario spreads the slice over both sources.
    let scenarios: Vec<_> = batch_scenarios(&map, Traffic::Cav, 7, 200).into_iter().step_by(4).take(n).collect();

    let baseline = run_batch(&scenarios, &map, &SimConfig::with_planner(PlannerKind::NonCooperative), |_| {});
    write_run_summaries(&out.join("nc"), &baseline, Some(&baseline))?;
    let mut sets = Vec::new();
    for planner in [PlannerKind::Opt, PlannerKind::Rollout] {
        let start = std::time::Instant::now();
        let runs = run_batch(&scenarios, &map, &SimConfig::with_planner(planner), |_| {});
        println!("{}: {} runs in {:.1?}", planner.name(), runs.len(), start.elapsed());
        write_run_summaries(&out.join(planner.name()), &runs, Some(&baseline))?;
        sets.push((planner, runs));
    }

    let report = compute_metrics(&baseline, &sets)?;
    println!("\n{} of {} scenarios have a deviating crossing order", report.deviating_scenarios.len(), scenarios.len());
    println!("{:<8} {:>9} {:>12} {:>12} {:>13}", "planner", "deviating", "rel. major", "rel. minor", "stopped minor");
    println!("{:<8} {:>9} {:>12} {:>12} {:>13.3}", "nc", "-", "-", "-", report.baseline.stopped_share.minor);
    for m in &report.planners {
        let med = |xs: &[f64]| median(xs).map_or("-".into(), |x| format!("{x:+.2} s"));
        println!(
            "{:<8} {:>9.3} {:>12} {:>12} {:>13.3}",
            m.planner.map_or("?", PlannerKind::name),
            m.deviating_share,
            med(&m.relative_duration.major),
            med(&m.relative_duration.minor),
            m.stopped_share.minor
        );
    }

    let dir = out.join("report");
    write_report(&dir, &report)?;
    plot_deviation(&dir.join("deviation.svg"), &read_deviation(&dir)?)?;
    plot_stops(&dir.join("stopped.svg"), &read_stops(&dir)?)?;
    let durations = read_samples(&dir, "relative_duration")?;
    plot_boxes(&dir.join("relative_duration.svg"), "Duration relative to the baseline", "s", &durations)?;
    println!("\ntables and charts in {}", dir.display());
    Ok(())
}
