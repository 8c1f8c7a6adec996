//! KL-regularized policy gradient on a two-armed bandit, next to its closed-form optimum.

use hfdrive::policy::{optimize, BanditEnv, Baseline, Optimizer, PolicyArch, ReferencePolicy, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = BanditEnv::new(vec![1.0, 0.0]);
    let sft = ReferencePolicy::new(env.uniform_policy(PolicyArch::Linear)?, "uniform");
    let q = sft.policy().probs(&BanditEnv::INPUT);
    println!(" beta   learned p(arm 0)   closed form   final KL");
    for beta in [0.0, 0.25, 0.5, 1.0, 2.0, 8.0] {
        let cfg = TrainingConfig {
            beta,
            learning_rate: if beta > 0.0 { (1.0 / beta).min(2.0) } else { 2.0 },
            iterations: 400,
            rollouts: 256,
            horizon: 1,
            baseline: Baseline::BatchMean,
            seed: 1,
            gamma: 1.0,
            optimizer: Optimizer::Sgd,
        };
        let out = optimize(&sft, &env, &cfg)?;
        let p = out.policy.probs(&BanditEnv::INPUT);
        let star = env.closed_form(&q, beta);
        println!(
            "{beta:>5}   {:>16.4}   {:>11.4}   {:>8.4}",
            p[0],
            star[0],
            out.trace.last().map_or(0.0, |t| t.kl_exact)
        );
    }
    Ok(())
}
