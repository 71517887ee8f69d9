//! Builds the T-junction lane map and lists its routes and conflict zones.
//!
//! `cargo run --example junction_map -- --export data/lehr_junction.toml`
//! writes the map document; `--load FILE` reads one back instead.

use coop_maneuver::map::{build_lehr_junction, load_map, LaneMap, ZoneKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let map = match args.iter().position(|a| a == "--load") {
        Some(k) => load_map(&std::fs::read_to_string(&args[k + 1])?)?,
        None => build_lehr_junction(),
    };
    if let Some(k) = args.iter().position(|a| a == "--export") {
        std::fs::write(&args[k + 1], map.to_toml()?)?;
        println!("wrote {}", args[k + 1]);
    }
    summary(&map);
    Ok(())
}

fn summary(map: &LaneMap) {
    println!("{} lanes, {} routes, {} conflict zones\n", map.lanes().len(), map.routes().len(), map.zones().len());
    println!("{:<8} {:>8} {:>8} {:>8} {:>9} {:>6}", "route", "length", "entry", "exit", "v_limit", "yield");
    for id in map.route_ids() {
        let r = map.route(id);
        let must_yield = map
            .route_ids()
            .any(|o| o != id && map.routes_conflict(id, o) && map.has_right_of_way(o, id));
        println!(
            "{:<8} {:>8.1} {:>8.1} {:>8.1} {:>9.1} {:>6}",
            r.id,
            r.length(),
            r.entry_s(),
            r.exit_s(),
            map.speed_limit_at(id, r.entry_s()),
            if must_yield { "yes" } else { "-" }
        );
    }
    println!("\nconflicting route pairs (first has right of way):");
    for a in map.route_ids() {
        for b in map.route_ids().filter(|&b| b > a && map.routes_conflict(a, b)) {
            let (hi, lo) = if map.has_right_of_way(a, b) { (a, b) } else { (b, a) };
            let kinds: Vec<&str> = map
                .route_zones(a, b)
                .iter()
                .map(|z| match z.kind {
                    ZoneKind::Crossing => "crossing",
                    ZoneKind::Merging => "merging",
                })
                .collect();
            println!("  {:<6} > {:<6} {}", map.route(hi).id, map.route(lo).id, kinds.join(", "));
        }
    }
}
