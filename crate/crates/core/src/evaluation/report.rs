//! Result files: per-run logs, run summaries, scenario manifests and the
//! aggregated metric tables.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::batch::Traffic;
use super::metrics::{deviates, median, MetricsReport, PlannerMetrics, RoadType, RunSummary, VehicleMetrics};
use super::scenarios::Scenario;
use crate::environment::VehicleId;
use crate::map::Arm;
use crate::sim::{Outcome, PlannerKind};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("malformed field {field:?} in {path}")]
    Malformed { path: PathBuf, field: String },
    #[error("no {0} runs found")]
    Missing(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn run_dir(out: &Path, planner: PlannerKind, traffic: Traffic) -> PathBuf {
    out.join("runs").join(planner.name()).join(traffic.name())
}

pub fn report_dir(out: &Path, traffic: Traffic) -> PathBuf {
    out.join("report").join(traffic.name())
}

/// `zone:first>second>...` groups joined by `;`.
pub fn encode_order(order: &BTreeMap<usize, Vec<VehicleId>>) -> String {
    order
        .iter()
        .map(|(z, ids)| {
            let ids: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            format!("{z}:{}", ids.join(">"))
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn decode_order(s: &str) -> Option<BTreeMap<usize, Vec<VehicleId>>> {
    let mut out = BTreeMap::new();
    for group in s.split(';').filter(|g| !g.is_empty()) {
        let (z, ids) = group.split_once(':')?;
        let ids = ids
            .split('>')
            .map(|i| i.parse().ok().map(VehicleId))
            .collect::<Option<Vec<_>>>()?;
        out.insert(z.parse().ok()?, ids);
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub vehicle_id: u32,
    pub arm: char,
    pub road_type: String,
    pub is_cav: u8,
    pub duration_s: Option<f64>,
    pub stopped: u8,
    pub avg_speed_mps: Option<f64>,
    pub deviating: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub scenario_id: String,
    pub planner: String,
    pub outcome: String,
    pub end_time: f64,
    pub deviating: u8,
    pub cycles: u64,
    pub requests: u64,
    pub rejections: u64,
    pub aborts: u64,
    pub tmin_violations: u64,
    pub window_violations: u64,
    pub mutual_violations: u64,
    pub stale_after_abort: u64,
    pub max_predictions: usize,
    pub reward: f64,
    pub crossing_order: String,
}

fn arm_of(c: char) -> Option<Arm> {
    Arm::ALL.into_iter().find(|a| a.letter() == c)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

/// Rows of `summary.csv` and `outcomes.csv`; `deviating` compares against
/// the baseline run of the same scenario when one is given.
pub fn summary_rows(runs: &[RunSummary], baseline: Option<&[RunSummary]>) -> (Vec<SummaryRow>, Vec<OutcomeRow>) {
    let base: BTreeMap<&str, &RunSummary> = baseline
        .unwrap_or(&[])
        .iter()
        .map(|r| (r.scenario_id.as_str(), r))
        .collect();
    let mut vehicles = Vec::new();
    let mut outcomes = Vec::new();
    for r in runs {
        let dev = base
            .get(r.scenario_id.as_str())
            .is_some_and(|b| !r.excluded() && !b.excluded() && deviates(r, b)) as u8;
        for v in &r.vehicles {
            vehicles.push(SummaryRow {
                scenario_id: r.scenario_id.clone(),
                vehicle_id: v.vehicle_id.0,
                arm: v.arm.letter(),
                road_type: v.road_type().name().to_string(),
                is_cav: v.is_cav as u8,
                duration_s: v.duration.map(round4),
                stopped: v.stopped as u8,
                avg_speed_mps: v.avg_speed.map(round4),
                deviating: dev,
            });
        }
        outcomes.push(OutcomeRow {
            scenario_id: r.scenario_id.clone(),
            planner: r.planner.name().to_string(),
            outcome: r.outcome.name().to_string(),
            end_time: round4(r.end_time),
            deviating: dev,
            cycles: r.cycles,
            requests: r.requests,
            rejections: r.rejections,
            aborts: r.aborts,
            tmin_violations: r.tmin_violations,
            window_violations: r.window_violations,
            mutual_violations: r.mutual_violations,
            stale_after_abort: r.stale_after_abort,
            max_predictions: r.max_predictions_per_cycle,
            reward: round4(r.reward),
            crossing_order: encode_order(&r.crossing_order),
        });
    }
    (vehicles, outcomes)
}

pub fn write_run_summaries(dir: &Path, runs: &[RunSummary], baseline: Option<&[RunSummary]>) -> Result<(), ReportError> {
    let (vehicles, outcomes) = summary_rows(runs, baseline);
    write_csv(&dir.join("summary.csv"), &vehicles)?;
    write_csv(&dir.join("outcomes.csv"), &outcomes)
}

pub fn write_manifest(path: &Path, scenarios: &[Scenario]) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = String::from("id,source,vehicles\n");
    for s in scenarios {
        text.push_str(&s.manifest_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

fn outcome_of(s: &str) -> Option<Outcome> {
    [Outcome::Completed, Outcome::Timeout, Outcome::Collision]
        .into_iter()
        .find(|o| o.name() == s)
}

/// Reads run summaries back from `summary.csv` and `outcomes.csv`.
pub fn read_run_summaries(dir: &Path) -> Result<Vec<RunSummary>, ReportError> {
    let vpath = dir.join("summary.csv");
    let opath = dir.join("outcomes.csv");
    let vehicles: Vec<SummaryRow> = read_csv(&vpath)?;
    let outcomes: Vec<OutcomeRow> = read_csv(&opath)?;
    let bad = |field: &str| ReportError::Malformed {
        path: opath.clone(),
        field: field.to_string(),
    };
    let mut per_run: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for v in &vehicles {
        per_run.entry(v.scenario_id.as_str()).or_default().push(v);
    }
    outcomes
        .iter()
        .map(|o| {
            let mut slots: BTreeMap<char, usize> = BTreeMap::new();
            let vs = per_run
                .get(o.scenario_id.as_str())
                .map(|rows| {
                    rows.iter()
                        .map(|v| {
                            let arm = arm_of(v.arm).ok_or_else(|| ReportError::Malformed {
                                path: vpath.clone(),
                                field: v.arm.to_string(),
                            })?;
                            let slot = slots.entry(v.arm).or_default();
                            *slot += 1;
                            Ok(VehicleMetrics {
                                vehicle_id: VehicleId(v.vehicle_id),
                                arm,
                                slot: *slot - 1,
                                is_cav: v.is_cav == 1,
                                duration: v.duration_s,
                                stopped: v.stopped == 1,
                                avg_speed: v.avg_speed_mps,
                            })
                        })
                        .collect::<Result<Vec<_>, ReportError>>()
                })
                .transpose()?
                .unwrap_or_default();
            Ok(RunSummary {
                scenario_id: o.scenario_id.clone(),
                planner: PlannerKind::parse(&o.planner).ok_or_else(|| bad(&o.planner))?,
                outcome: outcome_of(&o.outcome).ok_or_else(|| bad(&o.outcome))?,
                end_time: o.end_time,
                crossing_order: decode_order(&o.crossing_order).ok_or_else(|| bad(&o.crossing_order))?,
                vehicles: vs,
                cycles: o.cycles,
                requests: o.requests,
                rejections: o.rejections,
                aborts: o.aborts,
                tmin_violations: o.tmin_violations,
                window_violations: o.window_violations,
                mutual_violations: o.mutual_violations,
                stale_after_abort: o.stale_after_abort,
                max_predictions_per_cycle: o.max_predictions,
                reward: o.reward,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub planner: String,
    pub runs: usize,
    pub excluded: usize,
    pub timeouts: usize,
    pub collisions: usize,
    pub deviating: usize,
    pub deviating_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub planner: String,
    pub road_type: String,
    pub n: usize,
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRow {
    pub planner: String,
    pub road_type: String,
    pub stopped_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub planner: String,
    pub road_type: String,
    pub value: f64,
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

fn distribution(planner: &str, road: RoadType, xs: &[f64]) -> DistributionRow {
    DistributionRow {
        planner: planner.to_string(),
        road_type: road.name().to_string(),
        n: xs.len(),
        median: median(xs).map(round4),
        q25: quantile(xs, 0.25).map(round4),
        q75: quantile(xs, 0.75).map(round4),
        mean: (!xs.is_empty()).then(|| round4(xs.iter().sum::<f64>() / xs.len() as f64)),
    }
}

fn name_of(m: &PlannerMetrics) -> &'static str {
    m.planner.map_or("baseline", PlannerKind::name)
}

/// Writes the aggregated tables: deviation, relative duration, stops, speed
/// and the raw samples behind the distributions.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<(), ReportError> {
    let roads = [RoadType::Major, RoadType::Minor];
    let mut dev = Vec::new();
    let mut dur = Vec::new();
    let mut stops = Vec::new();
    let mut speed = Vec::new();
    let mut dur_samples = Vec::new();
    let mut speed_samples = Vec::new();
    let all: Vec<&PlannerMetrics> = std::iter::once(&report.baseline).chain(&report.planners).collect();
    for m in &all {
        let name = name_of(m);
        dev.push(DeviationRow {
            planner: name.to_string(),
            runs: m.runs,
            excluded: m.excluded_runs,
            timeouts: m.timeouts,
            collisions: m.collisions,
            deviating: m.deviating,
            deviating_share: round4(m.deviating_share),
        });
        for road in roads {
            stops.push(StopRow {
                planner: name.to_string(),
                road_type: road.name().to_string(),
                stopped_share: round4(*m.stopped_share.get(road)),
            });
            speed.push(distribution(name, road, m.avg_speed.get(road)));
            speed_samples.extend(m.avg_speed.get(road).iter().map(|&value| SampleRow {
                planner: name.to_string(),
                road_type: road.name().to_string(),
                value: round4(value),
            }));
        }
    }
    for m in &report.planners {
        for road in roads {
            dur.push(distribution(name_of(m), road, m.relative_duration.get(road)));
            dur_samples.extend(m.relative_duration.get(road).iter().map(|&value| SampleRow {
                planner: name_of(m).to_string(),
                road_type: road.name().to_string(),
                value: round4(value),
            }));
        }
    }
    write_csv(&dir.join("deviation.csv"), &dev)?;
    write_csv(&dir.join("relative_duration.csv"), &dur)?;
    write_csv(&dir.join("stopped.csv"), &stops)?;
    write_csv(&dir.join("avg_speed.csv"), &speed)?;
    write_csv(&dir.join("relative_duration_samples.csv"), &dur_samples)?;
    write_csv(&dir.join("avg_speed_samples.csv"), &speed_samples)?;
    let ids = report.deviating_scenarios.join("\n");
    let path = dir.join("deviating_scenarios.txt");
    fs::write(&path, ids + "\n").map_err(io_err(&path))
}

pub fn read_deviation(dir: &Path) -> Result<Vec<DeviationRow>, ReportError> {
    read_csv(&dir.join("deviation.csv"))
}

pub fn read_stops(dir: &Path) -> Result<Vec<StopRow>, ReportError> {
    read_csv(&dir.join("stopped.csv"))
}

pub fn read_samples(dir: &Path, name: &str) -> Result<Vec<SampleRow>, ReportError> {
    read_csv(&dir.join(format!("{name}_samples.csv")))
}

/// One acceptance threshold evaluated on batch metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    /// Targets are reported but do not fail a `--check` run.
    pub required: bool,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            detail,
            required: true,
        }
    }

    fn target(mut self) -> Self {
        self.required = false;
        self
    }
}

pub const MIN_DEVIATING_SHARE: f64 = 0.6;
pub const MIXED_MIN_DEVIATING_SHARE: f64 = 0.1;
pub const MAX_STOP_RATIO: f64 = 0.5;
pub const MAX_EXCLUDED_SHARE: f64 = 0.03;

/// Thresholds for the fully automated batch.
pub fn check_cav(report: &MetricsReport) -> Vec<Check> {
    let mut out = Vec::new();
    let nc_stop = report.baseline.stopped_share.minor;
    for m in &report.planners {
        let name = name_of(m);
        out.push(Check::new(
            format!("{name}: deviating share >= {MIN_DEVIATING_SHARE}"),
            m.deviating_share >= MIN_DEVIATING_SHARE,
            format!("{:.3} ({}/{})", m.deviating_share, m.deviating, m.runs - m.excluded_runs),
        ));
        let med = median(&m.relative_duration.minor);
        out.push(Check::new(
            format!("{name}: minor-road median relative duration < 0 s"),
            med.is_some_and(|x| x < 0.0),
            format!("{med:.3?} s over {} vehicles", m.relative_duration.minor.len()),
        ));
        out.push(Check::new(
            format!("{name}: minor-road stopped share <= {MAX_STOP_RATIO} x baseline"),
            m.stopped_share.minor <= MAX_STOP_RATIO * nc_stop + 1e-12,
            format!("{:.3} vs baseline {:.3}", m.stopped_share.minor, nc_stop),
        ));
        out.extend(check_safety(m));
    }
    out
}

fn check_safety(m: &PlannerMetrics) -> Vec<Check> {
    let name = name_of(m);
    let excluded = share_of(m.timeouts, m.runs);
    vec![
        Check::new(format!("{name}: zero collisions"), m.collisions == 0, format!("{}", m.collisions)),
        Check::new(
            format!("{name}: timeouts <= {:.0}%", MAX_EXCLUDED_SHARE * 100.0),
            excluded <= MAX_EXCLUDED_SHARE,
            format!("{}/{} ({:.2}%)", m.timeouts, m.runs, excluded * 100.0),
        ),
    ]
}

fn share_of(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Thresholds for the mixed batch, relative to the fully automated one when
/// available.
pub fn check_mixed(report: &MetricsReport, cav: Option<&MetricsReport>) -> Vec<Check> {
    let mut out = Vec::new();
    for m in &report.planners {
        let name = name_of(m);
        let full = cav
            .and_then(|c| c.planners.iter().find(|p| p.planner == m.planner))
            .map(|p| p.deviating_share);
        out.push(Check::new(
            format!("{name}: mixed deviating share in (0, fully automated share)"),
            m.deviating_share > 0.0 && full.is_none_or(|f| m.deviating_share < f),
            format!("{:.3} vs fully automated {full:.3?}", m.deviating_share),
        ));
        out.push(
            Check::new(
                format!("{name}: mixed deviating share >= {MIXED_MIN_DEVIATING_SHARE}"),
                m.deviating_share >= MIXED_MIN_DEVIATING_SHARE,
                format!("{:.3}", m.deviating_share),
            )
            .target(),
        );
        out.extend(check_safety(m));
    }
    out
}
