//! Scenario sets: the exhaustive enumeration, seeded random samples and the
//! mixed-traffic split.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::VehicleId;
use crate::map::{Arm, LaneMap, RouteId};

/// Distance of the first spawn slot to the stop line.
pub const FIRST_SLOT_DISTANCE: f64 = 15.0;
pub const SLOT_SPACING: f64 = 25.0;
pub const SPAWN_SPEED: f64 = 8.0;
pub const MAX_PER_ARM_ENUMERATED: usize = 2;
pub const MAX_PER_ARM_RANDOM: usize = 4;
pub const MAX_VEHICLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioSource {
    Enumerated,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVehicle {
    pub arm: Arm,
    /// 0 is the slot closest to the junction.
    pub slot: usize,
    pub target: Arm,
    pub is_cav: bool,
    /// Spawn distance to the stop line; the slot position when unset.
    #[serde(default)]
    pub d_stop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub source: ScenarioSource,
    pub vehicles: Vec<ScenarioVehicle>,
}

impl Scenario {
    /// Builds a scenario from per-arm target lists; slots follow list order.
    pub fn from_arms(id: impl Into<String>, source: ScenarioSource, arms: &[(Arm, Vec<Arm>)], is_cav: bool) -> Self {
        let vehicles = arms
            .iter()
            .flat_map(|(arm, targets)| {
                targets.iter().enumerate().map(move |(slot, &target)| ScenarioVehicle {
                    arm: *arm,
                    slot,
                    target,
                    is_cav,
                    d_stop: None,
                })
            })
            .collect();
        Self {
            id: id.into(),
            source,
            vehicles,
        }
    }

    /// Three CAVs where the priority rules hold up two early arrivals: ν₁
    /// turns left from the east, ν₂ goes right from the west, and ν₃ comes
    /// straight through from the north with the right of way over both.
    pub fn showcase() -> Self {
        let mut s = Self::from_arms(
            "showcase",
            ScenarioSource::Enumerated,
            &[
                (Arm::East, vec![Arm::West]),
                (Arm::West, vec![Arm::East]),
                (Arm::North, vec![Arm::East]),
            ],
            true,
        );
        for (v, d) in s.vehicles.iter_mut().zip([30.0, 30.0, 40.0]) {
            v.d_stop = Some(d);
        }
        s
    }

    pub fn vehicle_id(&self, k: usize) -> VehicleId {
        VehicleId(k as u32)
    }

    pub fn route(&self, k: usize, map: &LaneMap) -> RouteId {
        let v = &self.vehicles[k];
        map.find_route(v.arm, v.target).expect("scenario routes exist on the map")
    }

    /// Initial arc length of vehicle `k` along its route.
    pub fn spawn_s(&self, k: usize, map: &LaneMap) -> f64 {
        let v = &self.vehicles[k];
        let d = v.d_stop.unwrap_or(FIRST_SLOT_DISTANCE + SLOT_SPACING * v.slot as f64);
        map.route(self.route(k, map)).entry_s() - d
    }

    pub fn count_on(&self, arm: Arm) -> usize {
        self.vehicles.iter().filter(|v| v.arm == arm).count()
    }

    pub fn has_conflict(&self, map: &LaneMap) -> bool {
        let routes: Vec<RouteId> = (0..self.vehicles.len()).map(|k| self.route(k, map)).collect();
        routes
            .iter()
            .enumerate()
            .any(|(i, &a)| routes[i + 1..].iter().any(|&b| map.routes_conflict(a, b)))
    }

    /// Manifest line: `id,source,ARM:slot:TARGET:cav|hdv;...`.
    pub fn manifest_line(&self) -> String {
        let vs: Vec<String> = self
            .vehicles
            .iter()
            .map(|v| {
                format!(
                    "{}:{}:{}:{}",
                    v.arm.letter(),
                    v.slot,
                    v.target.letter(),
                    if v.is_cav { "cav" } else { "hdv" }
                )
            })
            .collect();
        format!("{},{:?},{}", self.id, self.source, vs.join(";"))
    }
}

/// Targets reachable from `arm`, in canonical arm order.
fn targets_from(arm: Arm) -> Vec<Arm> {
    Arm::ALL.into_iter().filter(|&a| a != arm).collect()
}

/// The seven per-arm configurations with at most two vehicles.
pub fn arm_configurations(arm: Arm) -> Vec<Vec<Arm>> {
    let t = targets_from(arm);
    let mut out = vec![vec![]];
    out.extend(t.iter().map(|&a| vec![a]));
    for &a in &t {
        for &b in &t {
            out.push(vec![a, b]);
        }
    }
    out
}

/// Every combination of up to two vehicles per arm containing at least one
/// conflicting pair, in canonical order.
pub fn enumerate_scenarios(map: &LaneMap) -> Vec<Scenario> {
    let [n, e, w] = Arm::ALL.map(arm_configurations);
    let mut out = Vec::new();
    for cn in &n {
        for ce in &e {
            for cw in &w {
                let arms = [(Arm::North, cn.clone()), (Arm::East, ce.clone()), (Arm::West, cw.clone())];
                let s = Scenario::from_arms(format!("enum-{:03}", out.len()), ScenarioSource::Enumerated, &arms, true);
                if s.has_conflict(map) {
                    out.push(s);
                }
            }
        }
    }
    out
}

/// `n` random scenarios with at most four vehicles per arm, at least one and
/// at most eight in total, and uniformly drawn routes.
pub fn sample_random_scenarios(n: usize, seed: u64, _map: &LaneMap) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let counts = loop {
                let c: Vec<usize> = Arm::ALL.iter().map(|_| rng.gen_range(0..=MAX_PER_ARM_RANDOM)).collect();
                let total: usize = c.iter().sum();
                if (1..=MAX_VEHICLES).contains(&total) {
                    break c;
                }
            };
            let arms: Vec<(Arm, Vec<Arm>)> = Arm::ALL
                .iter()
                .zip(&counts)
                .map(|(&arm, &c)| {
                    let t = targets_from(arm);
                    (arm, (0..c).map(|_| t[rng.gen_range(0..t.len())]).collect())
                })
                .collect();
            Scenario::from_arms(format!("rand-{:03}", k), ScenarioSource::Random, &arms, true)
        })
        .collect()
}

fn scenario_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, mixed with the batch seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Marks a seeded random subset as CAVs: ⌊N·ratio⌋ vehicles plus one more
/// with probability equal to the fractional remainder.
pub fn assign_mixed(scenario: &Scenario, ratio: f64, seed: u64) -> Scenario {
    let ratio = ratio.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, &scenario.id));
    let n = scenario.vehicles.len();
    let exact = n as f64 * ratio;
    let mut n_cav = exact.floor() as usize;
    let frac = exact - exact.floor();
    if frac > 1e-12 && rng.gen_bool(frac) {
        n_cav += 1;
    }
    let chosen = sample(&mut rng, n, n_cav.min(n));
    let mut out = scenario.clone();
    for v in &mut out.vehicles {
        v.is_cav = false;
    }
    for k in chosen.iter() {
        out.vehicles[k].is_cav = true;
    }
    out
}
