//! Stress-labelled segment pairs and a Bradley-Terry reward model fitted on them.

use hfdrive::pipeline::{clone_reference, reward_from_rollouts, ReferenceConfig, RewardDataConfig};
use hfdrive::reward::PreferenceLabel;
use hfdrive::scenario::standard_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = standard_suite();
    let (sft, _) = clone_reference(&suite, &ReferenceConfig::default())?;
    let cfg = RewardDataConfig::default();
    let (model, report, data) = reward_from_rollouts(&suite, sft.policy(), &cfg, 1)?;

    let count = |l| data.pairs.iter().filter(|p| p.label == l).count();
    println!(
        "{} segments, {} pairs (A {} / B {} / tie {})",
        data.segments.len(),
        data.pairs.len(),
        count(PreferenceLabel::APreferred),
        count(PreferenceLabel::BPreferred),
        count(PreferenceLabel::Tie)
    );
    println!(
        "loss {:.4} -> {:.4} over {} epochs",
        report.loss_trace.first().copied().unwrap_or(f64::NAN),
        report.final_loss,
        report.loss_trace.len()
    );

    let mut weights: Vec<(String, f64)> = model.feature_map.layout().into_iter().zip(model.theta.iter().copied()).collect();
    weights.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    println!("largest weights:");
    for (name, w) in weights.iter().take(8) {
        println!("  {name:<24} {w:>8.3}");
    }

    // most and least stressful segments, and what the model thinks of them
    let mut scored: Vec<_> = data.scores.iter().zip(&data.segments).collect();
    scored.sort_by(|a, b| a.0.stress.total_cmp(&b.0.stress));
    for (s, seg) in [scored[0], scored[scored.len() - 1]] {
        println!("{:<40} stress {:>6.2}  learned return {:>7.3}", s.segment, s.stress, model.segment_return(seg)?);
    }
    Ok(())
}
