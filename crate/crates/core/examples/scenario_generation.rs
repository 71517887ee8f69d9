//! The evaluation scenario set: enumerated arm configurations, seeded random
//! scenarios, and the CAV/HDV split used for mixed traffic.

use std::collections::BTreeMap;

use coop_maneuver::evaluation::scenarios::{assign_mixed, enumerate_scenarios, sample_random_scenarios};
use coop_maneuver::map::build_lehr_junction;

fn main() {
    let map = build_lehr_junction();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);

    let enumerated = enumerate_scenarios(&map);
    let random = sample_random_scenarios(200, seed, &map);
    println!("{} enumerated and {} random scenarios (seed {seed})", enumerated.len(), random.len());

    let mut sizes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in &enumerated {
        sizes.entry(s.vehicles.len()).or_default().0 += 1;
    }
    for s in &random {
        sizes.entry(s.vehicles.len()).or_default().1 += 1;
    }
    println!("\nvehicles  enumerated  random");
    for (n, (e, r)) in &sizes {
        println!("{n:>8}  {e:>10}  {r:>6}");
    }

    println!("\nfirst scenarios of each kind:");
    for s in enumerated.iter().take(3).chain(random.iter().take(3)) {
        println!("  {}", s.manifest_line());
    }

    println!("\nmixed-traffic split of the first random scenarios:");
    for s in random.iter().take(5) {
        let mixed = assign_mixed(s, 0.5, seed);
        let cavs = mixed.vehicles.iter().filter(|v| v.is_cav).count();
        println!("  {} ({} CAVs of {}): {}", s.id, cavs, s.vehicles.len(), mixed.manifest_line());
    }
}
