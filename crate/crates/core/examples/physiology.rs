//! Synthetic wearable and vehicle channels for one episode, aligned to sim ticks.

use hfdrive::feedback::{align_ticks, synthesize_episode, Modality, PhysioParams};
use hfdrive::scenario::standard;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let log = standard("pedestrian-crosswalk")?.run(3)?;
    let ego = log.ego().unwrap();
    let channels = synthesize_episode(&log, ego, &PhysioParams::default(), 3, 0.5)?;

    println!("{:.2} s episode", log.duration());
    for m in Modality::ALL {
        if let Some(buf) = channels.get(m) {
            let rate = m.rate().map_or("event".to_string(), |r| format!("{r} Hz"));
            println!("  {:<14} {:>8} {:>6} samples", m.name(), rate, buf.len());
        }
    }

    let ticks = align_ticks(&channels, log.header.dt, log.ticks.len());
    println!("\n  t      hr   d-hr  eda-peaks  gaze-on-road");
    // one row per simulated second
    for (t, f) in ticks.iter().enumerate().step_by(20) {
        println!(
            "{:>5.1}  {:>5.1} {:>5.1}  {:>9.1}  {:>12.2}",
            t as f64 * log.header.dt,
            f.hr_mean,
            f.hr_delta,
            f.eda_peaks,
            f.gaze_on_road
        );
    }
    for e in log.events_of(ego) {
        println!("event {:?} at tick {}", e.kind, e.tick);
    }
    Ok(())
}
