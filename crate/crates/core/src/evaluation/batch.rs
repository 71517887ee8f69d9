//! Batch orchestration: scenario sets per traffic type and parallel runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::RunSummary;
use super::scenarios::{assign_mixed, enumerate_scenarios, sample_random_scenarios, Scenario};
use crate::map::LaneMap;
use crate::sim::{run_scenario, ScenarioResult, SimConfig};

pub const RANDOM_SCENARIOS: usize = 200;
pub const MIXED_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Traffic {
    /// Every vehicle is connected and automated.
    Cav,
    /// A seeded half of the vehicles are human drivers.
    Mixed,
}

impl Traffic {
    pub fn name(self) -> &'static str {
        match self {
            Traffic::Cav => "cav",
            Traffic::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Traffic::Cav, Traffic::Mixed].into_iter().find(|t| t.name() == s)
    }
}

/// The enumerated scenarios followed by `n_random` sampled ones, split into
/// mixed traffic when asked.
pub fn batch_scenarios(map: &LaneMap, traffic: Traffic, seed: u64, n_random: usize) -> Vec<Scenario> {
    let mut all = enumerate_scenarios(map);
    all.extend(sample_random_scenarios(n_random, seed, map));
    match traffic {
        Traffic::Cav => all,
        Traffic::Mixed => all.iter().map(|s| assign_mixed(s, MIXED_RATIO, seed)).collect(),
    }
}

/// Runs every scenario in parallel; `sink` sees each full result (e.g. to
/// write its log) before it is reduced to a summary. Output order follows
/// the input order.
pub fn run_batch<F>(scenarios: &[Scenario], map: &LaneMap, cfg: &SimConfig, sink: F) -> Vec<RunSummary>
where
    F: Fn(&ScenarioResult) + Sync,
{
    scenarios
        .par_iter()
        .map(|s| {
            let r = run_scenario(s, map, cfg);
            sink(&r);
            RunSummary::from_result(&r, map)
        })
        .collect()
}
