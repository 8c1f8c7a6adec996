//! A traffic car driven by an LLM persona, served by the offline mock provider,
//! plus a feedback-interpretation round trip.

use std::path::Path;
use std::sync::Arc;

use hfdrive::llm::{LlmAdapter, MockProvider, RoleTag};
use hfdrive::pipeline::{label_episode, preference_data};
use hfdrive::reward::{apply_adjustments, interpret_via_llm, PairingConfig};
use hfdrive::scenario::{parse_scenario, standard, InstanceOptions};
use hfdrive::sim::AgentId;

const SCENARIO: &str = r#"
name = "persona-demo"
max_ticks = 40

[[road.lanes]]
id = 0
centerline = [{ x = 0.0, y = 0.0 }, { x = 400.0, y = 0.0 }]
width = 3.5
speed_limit = 15.0

[[agents]]
id = 0
kind = "ego"
spawn = { x = 0.0, y = 0.0, heading = 0.0 }
speed = 8.0
policy = { kind = "scripted-follow" }

[[agents]]
id = 1
kind = "scripted-car"
spawn = { x = 35.0, y = 0.0, heading = 0.0 }
speed = 8.0
policy = { kind = "llm-persona", persona = "aggressive" }
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = parse_scenario(SCENARIO, Path::new("."))?;
    for (label, adapter) in [
        ("mock default", LlmAdapter::mock()),
        (
            "canned reply",
            LlmAdapter::with_mock(MockProvider::default().with_canned(RoleTag::PersonaDrive, "steer=0 throttle=0.9 brake=0")),
        ),
        (
            "garbled reply",
            LlmAdapter::with_mock(MockProvider::default().with_canned(RoleTag::PersonaDrive, "no thanks")),
        ),
    ] {
        let adapter = Arc::new(adapter);
        let mut opts = InstanceOptions::new(0);
        opts.adapter = adapter.clone();
        let log = sc.instantiate(opts)?.run()?;
        let fallbacks = log.ticks.iter().filter(|r| r.fallbacks.contains(&AgentId(1))).count();
        let speed = log.footer.final_state.agents.iter().find(|a| a.id == AgentId(1)).map_or(0.0, |a| a.speed);
        println!("{label:<14} {} requests, {fallbacks} fallbacks, persona car ends at {speed:.1} m/s", adapter.issued());
    }

    // ask the (mock) model to reinterpret stress-labelled pairs
    let crosswalk = standard("pedestrian-crosswalk")?;
    let episodes = (0..3)
        .map(|s| label_episode(crosswalk.run(s)?, &crosswalk, &Default::default(), s, 0.0).map_err(Into::into))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let cfg = PairingConfig::default();
    let data = preference_data(&episodes, &cfg, 0);
    let adapter = LlmAdapter::mock();
    let adj = interpret_via_llm(&data.pairs, &data.scores, &cfg, &adapter);
    let revised = apply_adjustments(&data.pairs, &adj);
    let changed = revised.iter().zip(&data.pairs).filter(|(a, b)| a.label != b.label).count();
    println!("{} pairs, {} adjustments proposed, {changed} labels changed", data.pairs.len(), adj.len());
    Ok(())
}
