//! Runs each standard scenario once and prints what the ego ran into.
//!
//! `cargo run --example simulate -- 7` picks the episode seed.

use hfdrive::scenario::standard_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    for sc in standard_suite() {
        let log = sc.run(seed)?;
        let ego = log.ego().expect("standard scenarios have an ego");
        let last = &log.footer.final_state;
        let pose = last.agents.iter().find(|a| a.id == ego).map(|a| a.pose);
        println!(
            "{:<22} {:>4} ticks {:>5.1} s  ended {:?}",
            sc.name(),
            log.ticks.len(),
            log.duration(),
            log.footer.termination
        );
        if let Some(p) = pose {
            println!("    ego at ({:.1}, {:.1})", p.x, p.y);
        }
        for (kind, n) in log.event_counts(ego) {
            println!("    {:<16} x{n}", kind.name());
        }
    }

    // logs are plain NDJSON and replay byte for byte
    let sc = hfdrive::scenario::standard("car-following")?;
    let a = sc.run(seed)?.to_ndjson_string();
    let b = sc.run(seed)?.to_ndjson_string();
    println!("same seed, same bytes: {} ({} bytes)", a == b, a.len());
    Ok(())
}
