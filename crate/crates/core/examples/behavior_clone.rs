//! Clones the scripted drivers into a softmax reference policy and rolls it out.

use std::sync::Arc;

use hfdrive::pipeline::{clone_reference, ReferenceConfig};
use hfdrive::policy::{evaluate, EvalConfig};
use hfdrive::reward::{FeatureMap, RewardArch, RewardModel};
use hfdrive::scenario::standard_suite;
use hfdrive::sim::ActionBins;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = standard_suite();
    let (sft, report) = clone_reference(&suite, &ReferenceConfig::default())?;
    println!(
        "{} epochs, loss {:.3}, train accuracy {:.3}",
        report.loss_trace.len(),
        report.final_loss,
        report.train_accuracy
    );
    println!("{}", sft.provenance);

    // a zero reward model: only the driving metrics matter here
    let map = FeatureMap::new(suite[0].spec.world.sensor.clone(), ActionBins::default(), false);
    let zero = Arc::new(RewardModel::zeros(map, RewardArch::Linear));
    let seeds: Vec<u64> = (100..110).collect();
    for greedy in [false, true] {
        let r = evaluate(sft.policy(), sft.policy(), &suite, &seeds, &zero, &EvalConfig { greedy, ..Default::default() })?;
        println!("{}", if greedy { "greedy" } else { "sampled" });
        for m in &r.per_scenario {
            println!(
                "  {:<22} collisions {:>4.0}%  safety events {:>5.2}  distance {:>6.1} m",
                m.scenario,
                100.0 * m.collision_rate,
                m.safety_events,
                m.distance
            );
        }
    }
    Ok(())
}
