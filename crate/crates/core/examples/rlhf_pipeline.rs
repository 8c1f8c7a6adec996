//! The whole loop on the standard suite: clone a reference, fit a reward model on
//! synthetic preferences, optimize against it with a KL penalty, compare.
//!
//! `cargo run --release --example rlhf_pipeline -- 0.1` sets beta.

use hfdrive::pipeline::{clone_reference, reward_from_rollouts, KlBudget, ReferenceConfig, RewardDataConfig};
use hfdrive::policy::{collect_rollouts, evaluate, optimize, rollout_seeds, DrivingEnv, EvalConfig, EvalReport, TrainingConfig};
use hfdrive::scenario::standard_suite;

fn safety(r: &EvalReport) -> usize {
    r.rows.iter().map(|x| x.safety_events).sum()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let beta = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.1);
    let seed = 3;
    let suite = standard_suite();
    let (sft, _) = clone_reference(&suite, &ReferenceConfig::default())?;
    let (rm, fit, _) = reward_from_rollouts(&suite, sft.policy(), &RewardDataConfig::default(), seed)?;
    println!("reward model: {} pairs, loss {:.3}", fit.pairs_used, fit.final_loss);

    let env = DrivingEnv::new(suite.clone(), rm.clone())?;
    let cfg = TrainingConfig { beta, horizon: 300, seed, ..Default::default() };
    let first = collect_rollouts(&env, sft.policy(), sft.policy(), &rollout_seeds(seed, 0, cfg.rollouts), cfg.horizon)?;
    let budget = KlBudget::from_rewards(first.iter().flat_map(|b| b.steps.iter().map(|s| s.reward)), beta);

    let out = optimize(&sft, &env, &cfg)?;
    for t in &out.trace {
        println!(
            "iter {:>2}  objective {:>8.4}  reward {:>8.4}  kl {:>7.4}  collisions {}",
            t.iteration, t.estimate.combined, t.estimate.reward_term, t.kl_exact, t.collisions
        );
    }

    let seeds: Vec<u64> = (1000..1016).collect();
    let rl = evaluate(&out.policy, sft.policy(), &suite, &seeds, &rm, &EvalConfig::default())?;
    let base = evaluate(sft.policy(), sft.policy(), &suite, &seeds, &rm, &EvalConfig::default())?;
    println!("\n            mean reward  safety events  stress");
    for (name, r) in [("reference", &base), ("optimized", &rl)] {
        println!(
            "{name:<10} {:>12.4} {:>14} {:>7.3}",
            r.aggregate.mean_reward,
            safety(r),
            r.aggregate.mean_stress
        );
    }
    println!("KL on held-out states {:.4} (budget {:.2})", rl.aggregate.kl_exact, budget.budget);
    Ok(())
}
