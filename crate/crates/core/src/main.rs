use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use coop_maneuver::evaluation::batch::{batch_scenarios, run_batch, Traffic, RANDOM_SCENARIOS};
use coop_maneuver::evaluation::metrics::{compute_metrics, median, MetricsReport, RunSummary};
use coop_maneuver::evaluation::plot::{plot_boxes, plot_deviation, plot_stops};
use coop_maneuver::evaluation::report::{
    check_cav, check_mixed, read_deviation, read_run_summaries, read_samples, read_stops, report_dir, run_dir,
    write_manifest, write_report, write_run_summaries, Check,
};
use coop_maneuver::map::build_lehr_junction;
use coop_maneuver::sim::{Outcome, PlannerKind, SimConfig};

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(version, about = "Cooperative maneuver planning at a T-junction: batch runs, reports and charts")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate every scenario of a batch with one planner.
    Run {
        #[arg(long, value_parser = parse_planner)]
        planner: PlannerKind,
        #[arg(long, value_parser = parse_traffic, default_value = "cav")]
        traffic: Traffic,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = RANDOM_SCENARIOS)]
        n_random: usize,
        /// Probability that a CAV rejects a requested maneuver.
        #[arg(long, default_value_t = 0.0)]
        rejection_probability: f64,
        /// Skip the per-run trajectory logs.
        #[arg(long)]
        no_logs: bool,
    },
    /// Write the scenario manifest (enumerated and random scenarios).
    Enumerate {
        #[arg(long, value_parser = parse_traffic, default_value = "cav")]
        traffic: Traffic,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = RANDOM_SCENARIOS)]
        n_random: usize,
        /// Manifest file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run summaries against the non-cooperative baseline.
    Report {
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, value_parser = parse_traffic, num_args = 1.., default_values = ["cav", "mixed"])]
        traffic: Vec<Traffic>,
        #[arg(long, value_parser = parse_planner, value_delimiter = ',', default_value = "opt,rollout")]
        planners: Vec<PlannerKind>,
        /// Exit nonzero when an acceptance threshold is missed.
        #[arg(long)]
        check: bool,
    },
    /// Render SVG charts from the report tables.
    Plot {
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

fn parse_planner(s: &str) -> Result<PlannerKind, String> {
    PlannerKind::parse(s).ok_or_else(|| format!("unknown planner {s:?} (opt, rollout, nc, hdv)"))
}

fn parse_traffic(s: &str) -> Result<Traffic, String> {
    Traffic::parse(s).ok_or_else(|| format!("unknown traffic {s:?} (cav, mixed)"))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Res<bool> {
    match cmd {
        Cmd::Run {
            planner,
            traffic,
            seed,
            out,
            n_random,
            rejection_probability,
            no_logs,
        } => {
            if !(0.0..=1.0).contains(&rejection_probability) {
                return Err("rejection probability must lie in [0, 1]".into());
            }
            run(planner, traffic, seed, &out, n_random, rejection_probability, !no_logs)?;
            Ok(true)
        }
        Cmd::Enumerate {
            traffic,
            seed,
            n_random,
            out,
        } => {
            let scenarios = batch_scenarios(&build_lehr_junction(), traffic, seed, n_random);
            match out {
                Some(path) => {
                    write_manifest(&path, &scenarios)?;
                    println!("{} scenarios -> {}", scenarios.len(), path.display());
                }
                None => {
                    println!("id,source,vehicles");
                    for s in &scenarios {
                        println!("{}", s.manifest_line());
                    }
                }
            }
            Ok(true)
        }
        Cmd::Report {
            out,
            traffic,
            planners,
            check,
        } => report(&out, &traffic, &planners, check),
        Cmd::Plot { out } => {
            plot(&out)?;
            Ok(true)
        }
    }
}

fn config(planner: PlannerKind, seed: u64, rejection_probability: f64) -> SimConfig {
    SimConfig {
        seed,
        rejection_probability,
        ..SimConfig::with_planner(planner)
    }
}

fn run(planner: PlannerKind, traffic: Traffic, seed: u64, out: &Path, n_random: usize, p_reject: f64, logs: bool) -> Res<()> {
    let map = build_lehr_junction();
    let scenarios = batch_scenarios(&map, traffic, seed, n_random);
    let dir = run_dir(out, planner, traffic);
    fs::create_dir_all(&dir)?;
    write_manifest(&dir.join("manifest.txt"), &scenarios)?;
    let start = Instant::now();
    let runs = run_batch(&scenarios, &map, &config(planner, seed, p_reject), |r| {
        if logs {
            let path = dir.join(format!("{}.log", r.scenario_id));
            if let Err(e) = fs::write(&path, r.trajectory_csv(&map)) {
                eprintln!("warning: {}: {e}", path.display());
            }
        }
    });
    let elapsed = start.elapsed();
    let baseline = if planner == PlannerKind::NonCooperative {
        None
    } else {
        Some(run_batch(&scenarios, &map, &config(PlannerKind::NonCooperative, seed, 0.0), |_| {}))
    };
    write_run_summaries(&dir, &runs, baseline.as_deref().or(Some(&runs)))?;
    let count = |f: fn(&RunSummary) -> bool| runs.iter().filter(|r| f(r)).count();
    println!(
        "{} / {}: {} runs in {:.1?}, {} timeouts, {} collisions, {} rejections -> {}",
        planner.name(),
        traffic.name(),
        runs.len(),
        elapsed,
        count(|r| r.outcome == Outcome::Timeout),
        count(|r| r.outcome == Outcome::Collision),
        runs.iter().map(|r| r.rejections).sum::<u64>(),
        dir.display()
    );
    Ok(())
}

fn report(out: &Path, traffic: &[Traffic], planners: &[PlannerKind], check: bool) -> Res<bool> {
    let mut reports: Vec<(Traffic, MetricsReport)> = Vec::new();
    for &t in traffic {
        let base_dir = run_dir(out, PlannerKind::NonCooperative, t);
        if !base_dir.join("summary.csv").exists() {
            eprintln!("skipping {}: no baseline runs in {}", t.name(), base_dir.display());
            continue;
        }
        let baseline = read_run_summaries(&base_dir)?;
        let mut sets = Vec::new();
        for &p in planners {
            let dir = run_dir(out, p, t);
            if dir.join("summary.csv").exists() {
                sets.push((p, read_run_summaries(&dir)?));
            } else {
                eprintln!("skipping {} / {}: no runs", p.name(), t.name());
            }
        }
        let rep = compute_metrics(&baseline, &sets)?;
        let dir = report_dir(out, t);
        write_report(&dir, &rep)?;
        print_report(t, &rep);
        println!("  tables -> {}", dir.display());
        reports.push((t, rep));
    }
    if reports.is_empty() {
        return Err(format!("no runs found under {}", out.display()).into());
    }
    if !check {
        return Ok(true);
    }
    let cav = reports.iter().find(|(t, _)| *t == Traffic::Cav).map(|(_, r)| r);
    let mut checks: Vec<Check> = Vec::new();
    for (t, rep) in &reports {
        let mut c = match t {
            Traffic::Cav => check_cav(rep),
            Traffic::Mixed => check_mixed(rep, cav),
        };
        for x in &mut c {
            x.name = format!("{}: {}", t.name(), x.name);
        }
        checks.extend(c);
    }
    for c in &checks {
        let tag = if c.required { "" } else { " (target)" };
        println!("{} {}{tag} [{}]", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.pass || !c.required))
}

fn print_report(t: Traffic, rep: &MetricsReport) {
    println!(
        "{}: {} scenarios with a deviating order; baseline stopped major {:.3} minor {:.3}",
        t.name(),
        rep.deviating_scenarios.len(),
        rep.baseline.stopped_share.major,
        rep.baseline.stopped_share.minor
    );
    for m in &rep.planners {
        println!(
            "  {:8} deviating {:.3}  rel. duration median major {:>7} minor {:>7}  stopped major {:.3} minor {:.3}  timeouts {} collisions {}",
            m.planner.map_or("baseline", PlannerKind::name),
            m.deviating_share,
            fmt_opt(median(&m.relative_duration.major)),
            fmt_opt(median(&m.relative_duration.minor)),
            m.stopped_share.major,
            m.stopped_share.minor,
            m.timeouts,
            m.collisions
        );
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |x| format!("{x:.2}"))
}

fn plot(out: &Path) -> Res<()> {
    let mut any = false;
    for t in [Traffic::Cav, Traffic::Mixed] {
        let dir = report_dir(out, t);
        if !dir.join("deviation.csv").exists() {
            continue;
        }
        any = true;
        plot_deviation(&dir.join("deviation.svg"), &read_deviation(&dir)?)?;
        plot_stops(&dir.join("stopped.svg"), &read_stops(&dir)?)?;
        plot_boxes(
            &dir.join("relative_duration.svg"),
            "Duration relative to the baseline",
            "s",
            &read_samples(&dir, "relative_duration")?,
        )?;
        plot_boxes(
            &dir.join("avg_speed.svg"),
            "Average speed",
            "m/s",
            &read_samples(&dir, "avg_speed")?,
        )?;
        println!("charts -> {}", dir.display());
    }
    if !any {
        return Err(format!("no report tables under {}; run `report` first", out.display()).into());
    }
    Ok(())
}
