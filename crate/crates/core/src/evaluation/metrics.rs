//! Clipped per-vehicle measures and the batch comparison against the
//! non-cooperative baseline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::VehicleId;
use crate::map::{Arm, LaneMap};
use crate::sim::{Outcome, PlannerKind, Sample, ScenarioResult, VehicleTrajectory, END_MARKER};

/// Clipping starts this far before the stop line.
pub const CLIP_START: f64 = 60.0;
/// Below this speed a vehicle counts as stopped.
pub const V_STOP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("scenario {0} has no matching baseline run")]
    IdMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoadType {
    Major,
    Minor,
}

impl RoadType {
    pub fn of(arm: Arm) -> Self {
        if arm == Arm::West {
            RoadType::Minor
        } else {
            RoadType::Major
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadType::Major => "major",
            RoadType::Minor => "minor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clipped {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<Sample>,
}

impl Clipped {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn min_speed(&self) -> f64 {
        self.samples.iter().map(|p| p.v).fold(f64::INFINITY, f64::min)
    }

    pub fn distance(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.s - a.s,
            _ => 0.0,
        }
    }
}

fn interpolate(a: &Sample, b: &Sample, s: f64) -> Sample {
    let w = if b.s > a.s { (s - a.s) / (b.s - a.s) } else { 1.0 };
    let lerp = |x: f64, y: f64| x + w * (y - x);
    Sample {
        t: lerp(a.t, b.t),
        s,
        lane: if w < 1.0 { a.lane } else { b.lane },
        x: lerp(a.x, b.x),
        y: lerp(a.y, b.y),
        v: lerp(a.v, b.v),
        a: lerp(a.a, b.a),
    }
}

/// Sub-series from 60 m before the stop line to 15 m past the exit, with
/// interpolated end points; `None` if the end marker is never reached.
pub fn clip_to_segment(tr: &VehicleTrajectory, map: &LaneMap) -> Option<Clipped> {
    let route = map.route(tr.route);
    let (s0, s1) = (route.entry_s() - CLIP_START, route.exit_s() + END_MARKER);
    let start_k = tr.samples.iter().position(|p| p.s >= s0)?;
    let end_k = tr.samples.iter().position(|p| p.s >= s1)?;
    let start = if start_k == 0 {
        tr.samples[start_k]
    } else {
        interpolate(&tr.samples[start_k - 1], &tr.samples[start_k], s0)
    };
    let end = if end_k == 0 {
        tr.samples[0]
    } else {
        interpolate(&tr.samples[end_k - 1], &tr.samples[end_k], s1)
    };
    let mut samples = vec![start];
    samples.extend(tr.samples[start_k..end_k].iter().filter(|p| p.t > start.t).copied());
    if end.t > start.t {
        samples.push(end);
    }
    Some(Clipped {
        t_start: start.t,
        t_end: end.t,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub vehicle_id: VehicleId,
    pub arm: Arm,
    pub slot: usize,
    pub is_cav: bool,
    /// `None` for vehicles that never reached the end marker.
    pub duration: Option<f64>,
    pub stopped: bool,
    pub avg_speed: Option<f64>,
}

impl VehicleMetrics {
    pub fn road_type(&self) -> RoadType {
        RoadType::of(self.arm)
    }
}

pub fn vehicle_metrics(tr: &VehicleTrajectory, map: &LaneMap) -> VehicleMetrics {
    let clipped = clip_to_segment(tr, map);
    let min_v = match &clipped {
        Some(c) => c.min_speed(),
        None => {
            let s0 = map.route(tr.route).entry_s() - CLIP_START;
            tr.samples.iter().filter(|p| p.s >= s0).map(|p| p.v).fold(f64::INFINITY, f64::min)
        }
    };
    VehicleMetrics {
        vehicle_id: tr.id,
        arm: tr.arm,
        slot: tr.slot,
        is_cav: tr.is_cav,
        duration: clipped.as_ref().map(Clipped::duration),
        stopped: min_v < V_STOP,
        avg_speed: clipped
            .as_ref()
            .filter(|c| c.duration() > 0.0)
            .map(|c| c.distance() / c.duration()),
    }
}

/// Compact record of one run, enough for every batch metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_id: String,
    pub planner: PlannerKind,
    pub outcome: Outcome,
    pub end_time: f64,
    pub crossing_order: BTreeMap<usize, Vec<VehicleId>>,
    pub vehicles: Vec<VehicleMetrics>,
    pub cycles: u64,
    pub requests: u64,
    pub rejections: u64,
    pub aborts: u64,
    pub tmin_violations: u64,
    pub window_violations: u64,
    pub mutual_violations: u64,
    pub stale_after_abort: u64,
    pub max_predictions_per_cycle: usize,
    pub reward: f64,
}

impl RunSummary {
    pub fn from_result(r: &ScenarioResult, map: &LaneMap) -> Self {
        Self {
            scenario_id: r.scenario_id.clone(),
            planner: r.planner,
            outcome: r.outcome,
            end_time: r.end_time,
            crossing_order: r.crossing_order.clone(),
            vehicles: r.trajectories.iter().map(|t| vehicle_metrics(t, map)).collect(),
            cycles: r.log.cycles,
            requests: r.log.requests,
            rejections: r.log.rejections,
            aborts: r.log.aborts,
            tmin_violations: r.log.tmin_violations,
            window_violations: r.log.window_violations,
            mutual_violations: r.log.mutual_violations,
            stale_after_abort: r.log.stale_after_abort,
            max_predictions_per_cycle: r.log.max_predictions_per_cycle,
            reward: super::reward::reward_score(r, map, &super::reward::RewardWeights::default()).cumulative,
        }
    }

    pub fn excluded(&self) -> bool {
        self.outcome != Outcome::Completed
    }
}

/// Crossing order differs from the baseline's in some zone.
pub fn deviates(run: &RunSummary, baseline: &RunSummary) -> bool {
    run.crossing_order != baseline.crossing_order
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadSplit<T> {
    pub major: T,
    pub minor: T,
}

impl<T> RoadSplit<T> {
    pub fn get(&self, r: RoadType) -> &T {
        match r {
            RoadType::Major => &self.major,
            RoadType::Minor => &self.minor,
        }
    }

    pub fn get_mut(&mut self, r: RoadType) -> &mut T {
        match r {
            RoadType::Major => &mut self.major,
            RoadType::Minor => &mut self.minor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlannerMetrics {
    pub planner: Option<PlannerKind>,
    pub runs: usize,
    pub excluded_runs: usize,
    pub timeouts: usize,
    pub collisions: usize,
    pub deviating: usize,
    /// Deviating runs among the runs completed in both configurations.
    pub deviating_share: f64,
    /// Per-vehicle clipped duration minus the baseline's, deviating set only.
    pub relative_duration: RoadSplit<Vec<f64>>,
    pub stopped_share: RoadSplit<f64>,
    pub avg_speed: RoadSplit<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Scenarios where at least one planner deviates from the baseline.
    pub deviating_scenarios: Vec<String>,
    pub baseline: PlannerMetrics,
    pub planners: Vec<PlannerMetrics>,
}

impl MetricsReport {
    pub fn planner(&self, kind: PlannerKind) -> Option<&PlannerMetrics> {
        self.planners.iter().find(|p| p.planner == Some(kind))
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn share(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn stop_and_speed(runs: &[&RunSummary]) -> (RoadSplit<f64>, RoadSplit<Vec<f64>>) {
    let mut stopped = RoadSplit::<(usize, usize)>::default();
    let mut speed = RoadSplit::<Vec<f64>>::default();
    for r in runs {
        for v in &r.vehicles {
            let e = stopped.get_mut(v.road_type());
            e.0 += v.stopped as usize;
            e.1 += 1;
            if let Some(s) = v.avg_speed {
                speed.get_mut(v.road_type()).push(s);
            }
        }
    }
    (
        RoadSplit {
            major: share(stopped.major.0, stopped.major.1),
            minor: share(stopped.minor.0, stopped.minor.1),
        },
        speed,
    )
}

/// Compares every planner's runs with the baseline runs of the same
/// scenarios.
pub fn compute_metrics(
    baseline: &[RunSummary],
    planners: &[(PlannerKind, Vec<RunSummary>)],
) -> Result<MetricsReport, MetricsError> {
    let base: BTreeMap<&str, &RunSummary> = baseline.iter().map(|r| (r.scenario_id.as_str(), r)).collect();
    for (_, runs) in planners {
        if let Some(r) = runs.iter().find(|r| !base.contains_key(r.scenario_id.as_str())) {
            return Err(MetricsError::IdMismatch(r.scenario_id.clone()));
        }
    }
    let mut deviating_ids = BTreeSet::new();
    for (_, runs) in planners {
        for r in runs {
            let b = base[r.scenario_id.as_str()];
            if !r.excluded() && !b.excluded() && deviates(r, b) {
                deviating_ids.insert(r.scenario_id.clone());
            }
        }
    }

    let mut out = MetricsReport {
        deviating_scenarios: deviating_ids.iter().cloned().collect(),
        ..Default::default()
    };
    let base_dev: Vec<&RunSummary> = baseline
        .iter()
        .filter(|r| deviating_ids.contains(&r.scenario_id) && !r.excluded())
        .collect();
    let (st, sp) = stop_and_speed(&base_dev);
    out.baseline = PlannerMetrics {
        planner: baseline.first().map(|r| r.planner),
        runs: baseline.len(),
        excluded_runs: baseline.iter().filter(|r| r.excluded()).count(),
        timeouts: baseline.iter().filter(|r| r.outcome == Outcome::Timeout).count(),
        collisions: baseline.iter().filter(|r| r.outcome == Outcome::Collision).count(),
        stopped_share: st,
        avg_speed: sp,
        ..Default::default()
    };

    for (kind, runs) in planners {
        let mut m = PlannerMetrics {
            planner: Some(*kind),
            runs: runs.len(),
            excluded_runs: runs.iter().filter(|r| r.excluded()).count(),
            timeouts: runs.iter().filter(|r| r.outcome == Outcome::Timeout).count(),
            collisions: runs.iter().filter(|r| r.outcome == Outcome::Collision).count(),
            ..Default::default()
        };
        let comparable: Vec<(&RunSummary, &RunSummary)> = runs
            .iter()
            .map(|r| (r, base[r.scenario_id.as_str()]))
            .filter(|(r, b)| !r.excluded() && !b.excluded())
            .collect();
        m.deviating = comparable.iter().filter(|(r, b)| deviates(r, b)).count();
        m.deviating_share = share(m.deviating, comparable.len());
        let in_set: Vec<(&RunSummary, &RunSummary)> = comparable
            .into_iter()
            .filter(|(r, _)| deviating_ids.contains(&r.scenario_id))
            .collect();
        for (r, b) in &in_set {
            for v in &r.vehicles {
                let Some(bv) = b.vehicles.iter().find(|x| x.arm == v.arm && x.slot == v.slot) else { continue };
                if let (Some(d), Some(db)) = (v.duration, bv.duration) {
                    m.relative_duration.get_mut(v.road_type()).push(d - db);
                }
            }
        }
        let set: Vec<&RunSummary> = in_set.iter().map(|(r, _)| *r).collect();
        let (st, sp) = stop_and_speed(&set);
        m.stopped_share = st;
        m.avg_speed = sp;
        out.planners.push(m);
    }
    Ok(out)
}
