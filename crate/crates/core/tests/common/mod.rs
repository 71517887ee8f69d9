//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use coop_maneuver::driver::{Activation, MlpParameters};
use coop_maneuver::environment::VehicleId;
use coop_maneuver::joint::{Agent, JointModel};
use coop_maneuver::map::{Arm, LaneMap};
use coop_maneuver::planner_opt::evaluate;
use coop_maneuver::prediction::{PredictionConfig, PriorityAssignmentSet};

/// Dense forward pass written out with explicit index loops.
pub fn mlp_oracle(p: &MlpParameters, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let last = p.layers.len() - 1;
    for (k, layer) in p.layers.iter().enumerate() {
        let mut y = vec![0.0; layer.bias.len()];
        for r in 0..y.len() {
            let mut acc = layer.bias[r];
            for c in 0..x.len() {
                acc += layer.weights[r][c] * x[c];
            }
            y[r] = if k == last {
                acc
            } else {
                match p.activation {
                    Activation::Tanh => acc.tanh(),
                    Activation::LeakyRelu => {
                        if acc > 0.0 {
                            acc
                        } else {
                            0.01 * acc
                        }
                    }
                }
            };
        }
        x = y;
    }
    x
}

fn others(arm: Arm) -> [Arm; 2] {
    match arm {
        Arm::North => [Arm::East, Arm::West],
        Arm::East => [Arm::North, Arm::West],
        Arm::West => [Arm::North, Arm::East],
    }
}

/// All 7 × 7 × 7 per-arm configurations with a conflicting route pair, as
/// canonical `ARM:slot:TARGET` sets.
pub fn enumeration_oracle(map: &LaneMap) -> BTreeSet<Vec<String>> {
    let per_arm = |arm: Arm| {
        let t = others(arm);
        let mut v: Vec<Vec<Arm>> = vec![vec![]];
        for a in t {
            v.push(vec![a]);
        }
        for a in t {
            for b in t {
                v.push(vec![a, b]);
            }
        }
        assert_eq!(v.len(), 7);
        v
    };
    let mut out = BTreeSet::new();
    let mut raw = 0;
    for w in per_arm(Arm::West) {
        for e in per_arm(Arm::East) {
            for n in per_arm(Arm::North) {
                raw += 1;
                let mut vehicles = Vec::new();
                for (arm, targets) in [(Arm::North, &n), (Arm::East, &e), (Arm::West, &w)] {
                    for (slot, t) in targets.iter().enumerate() {
                        vehicles.push((arm, slot, *t));
                    }
                }
                let routes: Vec<_> = vehicles.iter().map(|&(a, _, t)| map.find_route(a, t).unwrap()).collect();
                let conflict = (0..routes.len())
                    .any(|i| (i + 1..routes.len()).any(|j| map.routes_conflict(routes[i], routes[j])));
                if conflict {
                    let mut key: Vec<String> =
                        vehicles.iter().map(|(a, s, t)| format!("{}:{s}:{}", a.letter(), t.letter())).collect();
                    key.sort();
                    out.insert(key);
                }
            }
        }
    }
    assert_eq!(raw, 343);
    out
}

pub struct Exhaustive {
    pub p: PriorityAssignmentSet,
    pub efficiency: f64,
    pub evaluated: usize,
}

/// Best valid assignment set over every consistent orientation of the given
/// pairs (each pair unassigned, one way or the other). Ties prefer fewer
/// assignments, then the lexicographically smaller sorted pair list.
pub fn exhaustive_search(
    jm: &JointModel,
    agents: &[Agent],
    pairs: &[(VehicleId, VehicleId)],
    cfg: &PredictionConfig,
) -> Option<Exhaustive> {
    let total = 3usize.pow(pairs.len() as u32);
    let mut best: Option<(f64, usize, Vec<(VehicleId, VehicleId)>, PriorityAssignmentSet)> = None;
    for code in 0..total {
        let mut c = code;
        let mut chosen = Vec::new();
        for &(a, b) in pairs {
            match c % 3 {
                1 => chosen.push((a, b)),
                2 => chosen.push((b, a)),
                _ => {}
            }
            c /= 3;
        }
        let p = PriorityAssignmentSet::from_pairs(chosen.iter().copied()).unwrap();
        let e = evaluate(jm, agents, &p, cfg);
        if !e.valid {
            continue;
        }
        chosen.sort();
        let better = match &best {
            None => true,
            Some((be, bn, bk, _)) => {
                e.efficiency > *be || (e.efficiency == *be && (chosen.len() < *bn || (chosen.len() == *bn && chosen < *bk)))
            }
        };
        if better {
            best = Some((e.efficiency, chosen.len(), chosen, p));
        }
    }
    best.map(|(efficiency, _, _, p)| Exhaustive {
        p,
        efficiency,
        evaluated: total,
    })
}
