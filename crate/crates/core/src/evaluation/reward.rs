//! Weighted step reward over recorded trajectories, evaluated at the 5 Hz
//! policy rate.

use serde::{Deserialize, Serialize};

use crate::environment::VEHICLE_LENGTH;
use crate::joint::{Agent, JointConfig, JointModel};
use crate::map::LaneMap;
use crate::sim::{Outcome, ScenarioResult, END_MARKER};

pub const POLICY_PERIOD: f64 = 0.2;
pub const IDLE_SPEED: f64 = 0.3;
pub const IDLE_RANGE: f64 = 30.0;
pub const RELUCTANCE_SPEED: f64 = 2.0;
pub const RELUCTANCE_LEAD_RANGE: f64 = 30.0;
pub const PROXIMITY_GAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub velocity: f64,
    pub idle: f64,
    pub reluctance: f64,
    pub proximity: f64,
    pub collision: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            velocity: 0.06,
            idle: 0.02,
            reluctance: 0.02,
            proximity: 0.2,
            collision: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            velocity: self.velocity * k,
            idle: self.idle * k,
            reluctance: self.reluctance * k,
            proximity: self.proximity * k,
            collision: self.collision * k,
        }
    }
}

/// Unweighted components of one step; penalties are negative counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub velocity: f64,
    pub idle: f64,
    pub reluctance: f64,
    pub proximity: f64,
    pub collision: f64,
}

impl RewardTerms {
    pub fn weighted(&self, w: &RewardWeights) -> f64 {
        w.velocity * self.velocity
            + w.idle * self.idle
            + w.reluctance * self.reluctance
            + w.proximity * self.proximity
            + w.collision * self.collision
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardScore {
    pub terms: Vec<RewardTerms>,
    pub per_step: Vec<f64>,
    pub cumulative: f64,
}

/// Reward components for one snapshot of agents.
pub fn step_terms(jm: &JointModel, agents: &[Agent], collided: bool) -> RewardTerms {
    let map = jm.map;
    let active: Vec<usize> = (0..agents.len())
        .filter(|&k| !agents[k].departed && agents[k].s < map.route(agents[k].route).exit_s() + END_MARKER)
        .collect();
    let mut t = RewardTerms::default();
    if !active.is_empty() {
        t.velocity = active
            .iter()
            .map(|&k| (agents[k].v / jm.speed_limit(&agents[k]).max(1e-9)).min(1.0))
            .sum::<f64>()
            / active.len() as f64;
    }
    for &k in &active {
        let a = &agents[k];
        let route = map.route(a.route);
        let near = a.s >= route.entry_s() - IDLE_RANGE && a.s <= route.exit_s();
        if a.v < IDLE_SPEED && near {
            t.idle -= 1.0;
        }
        let lead_close = jm.lead(agents, k).is_some_and(|(d, _)| d <= RELUCTANCE_LEAD_RANGE);
        if a.is_cav && a.v < RELUCTANCE_SPEED && !lead_close {
            t.reluctance -= 1.0;
        }
    }
    for (x, &i) in active.iter().enumerate() {
        for &j in &active[x + 1..] {
            let (a, b) = (&agents[i], &agents[j]);
            let same_lane = jm
                .position_on(b, a.route)
                .map(|pb| pb - a.s)
                .or_else(|| jm.position_on(a, b.route).map(|pa| b.s - pa))
                .map(|d| d.abs() - VEHICLE_LENGTH);
            let gap = same_lane.or_else(|| {
                map.routes_conflict(a.route, b.route).then(|| {
                    let pa = map.route_pose(a.route, a.s).position;
                    let pb = map.route_pose(b.route, b.s).position;
                    pa.distance(pb) - VEHICLE_LENGTH
                })
            });
            if gap.is_some_and(|g| g < PROXIMITY_GAP) {
                t.proximity -= 1.0;
            }
        }
    }
    if collided {
        t.collision = -1.0;
    }
    t
}

/// Reward of a recorded run, one step per policy period.
pub fn reward_score(result: &ScenarioResult, map: &LaneMap, w: &RewardWeights) -> RewardScore {
    let jm = JointModel::new(map, JointConfig::default());
    let Some(first) = result.trajectories.first() else {
        return RewardScore::default();
    };
    let n = first.samples.len();
    let dt = if n > 1 { first.samples[1].t - first.samples[0].t } else { POLICY_PERIOD };
    let stride = ((POLICY_PERIOD / dt).round() as usize).max(1);
    let mut ks: Vec<usize> = (0..n).step_by(stride).collect();
    let collided = result.outcome == Outcome::Collision;
    if collided && ks.last() != Some(&(n - 1)) {
        ks.push(n - 1);
    }
    let mut score = RewardScore::default();
    for &k in &ks {
        let agents: Vec<Agent> = result
            .trajectories
            .iter()
            .map(|tr| {
                let p = &tr.samples[k];
                let mut a = Agent::new(tr.id, tr.is_cav, tr.route, p.s, p.v);
                a.departed = p.s >= map.route(tr.route).length();
                a
            })
            .collect();
        let terms = step_terms(&jm, &agents, collided && k == n - 1);
        let r = terms.weighted(w);
        score.terms.push(terms);
        score.per_step.push(r);
        score.cumulative += r;
    }
    score
}
