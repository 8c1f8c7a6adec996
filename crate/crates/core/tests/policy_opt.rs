use approx::assert_relative_eq;
use hfdrive::policy::*;
use hfdrive::sim::{ActionBins, Observation, SensorConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bandit_cfg(beta: f64, seed: u64) -> TrainingConfig {
    TrainingConfig {
        beta,
        // the KL term's curvature grows with beta; keep lr * beta bounded
        learning_rate: if beta > 0.0 { (1.0 / beta).min(2.0) } else { 2.0 },
        iterations: 400,
        rollouts: 256,
        horizon: 1,
        baseline: Baseline::BatchMean,
        seed,
        gamma: 1.0,
        optimizer: Optimizer::Sgd,
    }
}

fn train_bandit(rewards: Vec<f64>, beta: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let env = BanditEnv::new(rewards);
    let sft = ReferencePolicy::new(env.uniform_policy(PolicyArch::Linear).unwrap(), "uniform");
    let out = optimize(&sft, &env, &bandit_cfg(beta, seed)).unwrap();
    let q = sft.policy().probs(&BanditEnv::INPUT);
    (out.policy.probs(&BanditEnv::INPUT), env.closed_form(&q, beta))
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn bandit_beta_one_matches_closed_form() {
    let (p, star) = train_bandit(vec![0.0, 1.0], 1.0, 3);
    // oracle: e / (1 + e)
    let e = std::f64::consts::E;
    assert_relative_eq!(star[1], e / (1.0 + e), epsilon = 1e-12);
    assert!((p[1] - star[1]).abs() < 0.02, "{p:?} vs {star:?}");
}

#[test]
fn bandit_large_beta_stays_at_reference() {
    let (p, _) = train_bandit(vec![0.0, 1.0], 100.0, 1);
    assert!((p[1] - 0.5).abs() < 0.02, "{p:?}");
}

#[test]
fn bandit_beta_zero_goes_greedy() {
    let (p, _) = train_bandit(vec![0.0, 1.0], 0.0, 2);
    assert!(p[1] > 0.98, "{p:?}");
}

#[test]
fn bandit_random_draws_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..5 {
        let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = rng.random_range(0.3..2.0);
        let (p, star) = train_bandit(r.clone(), beta, k);
        assert!(tv(&p, &star) < 0.02, "r={r:?} beta={beta}: {p:?} vs {star:?}");
    }
}

#[test]
fn expected_gradient_matches_finite_differences() {
    let env = BanditEnv::new(vec![1.0, 0.0, 0.3]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for arch in [PolicyArch::Linear, PolicyArch::Mlp { hidden: 3 }] {
        let sft = env.uniform_policy(arch).unwrap();
        for _ in 0..10 {
            let mut pol = sft.clone();
            pol.params.iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
            let beta = 0.4;
            let g = expected_policy_gradient(&pol, &sft, &BanditEnv::INPUT, &env.rewards, beta);
            let j = |p: &Policy| ObjectiveEstimate::exact(p, &sft, &BanditEnv::INPUT, &env.rewards, beta).combined;
            let h = 1e-5;
            for i in 0..pol.params.len() {
                let (mut a, mut b) = (pol.clone(), pol.clone());
                a.params[i] += h;
                b.params[i] -= h;
                let fd = (j(&a) - j(&b)) / (2.0 * h);
                let err = (g[i] - fd).abs() / fd.abs().max(1e-6);
                assert!(err < 1e-3 || (g[i] - fd).abs() < 1e-9, "param {i}: {} vs {fd}", g[i]);
            }
        }
    }
}

fn random_demos(dim: usize, n_actions: usize, n: usize, seed: u64) -> Vec<Demonstration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Demonstration {
            x: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bin: rng.random_range(0..n_actions),
        })
        .collect()
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for arch in [PolicyArch::Linear, PolicyArch::Mlp { hidden: 4 }] {
        let base = Policy::new(arch, PolicyInput::Raw { dim: 4 }, ActionBins::default(), 0.7, 1).unwrap();
        let demos = random_demos(4, base.n_actions(), 12, 3);
        for _ in 0..10 {
            let mut p = base.clone();
            p.params.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            let (_, g) = cross_entropy(&p, &demos, 1e-3);
            let h = 1e-6;
            for i in (0..p.params.len()).step_by(7) {
                let (mut a, mut b) = (p.clone(), p.clone());
                a.params[i] += h;
                b.params[i] -= h;
                let fd = (cross_entropy(&a, &demos, 1e-3).0 - cross_entropy(&b, &demos, 1e-3).0) / (2.0 * h);
                let err = (g[i] - fd).abs() / fd.abs().max(1e-4);
                assert!(err < 1e-4, "param {i}: {} vs {fd}", g[i]);
            }
        }
    }
}

#[test]
fn behavior_clone_constant_driver_generalizes() {
    let init = Policy::new(PolicyArch::Linear, PolicyInput::Raw { dim: 5 }, ActionBins::default(), 1.0, 0).unwrap();
    let mut demos = random_demos(5, 1, 400, 21);
    demos.iter_mut().for_each(|d| {
        d.x[4] = 1.0;
        d.bin = 8;
    });
    let (train, held) = demos.split_at(300);
    let (sft, report) = behavior_clone(init, train, &BcConfig::default(), "constant").unwrap();
    assert!(report.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    let hits = held.iter().filter(|d| sft.policy().greedy(&d.x) == 8).count();
    assert!(hits as f64 >= 0.95 * held.len() as f64);
}

#[test]
fn behavior_clone_single_demo_prefers_its_action() {
    let init = Policy::new(PolicyArch::Mlp { hidden: 4 }, PolicyInput::Raw { dim: 3 }, ActionBins::default(), 1.0, 4).unwrap();
    let d = Demonstration {
        x: vec![0.2, -0.5, 1.0],
        bin: 3,
    };
    let (sft, _) = behavior_clone(init, std::slice::from_ref(&d), &BcConfig::default(), "one").unwrap();
    let p = sft.policy().probs(&d.x);
    assert!((0..p.len()).filter(|&i| i != 3).all(|i| p[3] > p[i]));
}

#[test]
fn behavior_clone_rejects_empty_and_bad_labels() {
    let init = Policy::new(PolicyArch::Linear, PolicyInput::Raw { dim: 2 }, ActionBins::default(), 1.0, 0).unwrap();
    assert!(matches!(
        behavior_clone(init.clone(), &[], &BcConfig::default(), "none"),
        Err(PolicyError::EmptyDemonstrations)
    ));
    let bad = Demonstration { x: vec![0.0, 1.0], bin: 99 };
    assert!(behavior_clone(init, &[bad], &BcConfig::default(), "bad").is_err());
}

#[test]
fn every_estimate_satisfies_the_identity() {
    let env = BanditEnv::new(vec![1.0, 0.0]);
    let sft = ReferencePolicy::new(env.uniform_policy(PolicyArch::Linear).unwrap(), "uniform");
    let mut cfg = bandit_cfg(0.37, 4);
    cfg.iterations = 30;
    let out = optimize(&sft, &env, &cfg).unwrap();
    for t in &out.trace {
        let e = t.estimate;
        assert_eq!(e.combined, e.reward_term - e.beta * e.kl_term);
    }
    // first iteration: policy is a copy of the reference
    assert_eq!(out.trace[0].estimate.kl_term, 0.0);
    assert_eq!(out.trace[0].kl_exact, 0.0);
}

#[test]
fn optimize_is_deterministic_for_a_seed() {
    let env = BanditEnv::new(vec![1.0, 0.0, 0.5]);
    let sft = ReferencePolicy::new(env.uniform_policy(PolicyArch::Linear).unwrap(), "uniform");
    let mut cfg = bandit_cfg(0.5, 8);
    cfg.iterations = 20;
    cfg.optimizer = Optimizer::ADAM;
    let a = optimize(&sft, &env, &cfg).unwrap();
    let b = optimize(&sft, &env, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn policy_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Policy::new(
        PolicyArch::Mlp { hidden: 5 },
        PolicyInput::Observation { sensor: SensorConfig::default() },
        ActionBins::default(),
        0.8,
        3,
    )
    .unwrap();
    p.params.iter_mut().enumerate().for_each(|(i, w)| *w += (i as f64 * 0.37).cos());
    let path = dir.path().join("p.json");
    p.save(&path).unwrap();
    assert_eq!(Policy::load(&path).unwrap(), p);
}

fn arb_obs() -> impl Strategy<Value = Observation> {
    let s = SensorConfig::default();
    (
        0.0..15.0f64,
        -10.0..10.0f64,
        -3.2..3.2f64,
        prop::collection::vec(0.0..50.0f64, s.rays),
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -15.0..15.0f64), s.nearest_k),
        0.0..50.0f64,
    )
        .prop_map(|(speed, accel, heading, rays, near, cw)| Observation {
            speed,
            long_accel: accel,
            lat_accel: -accel / 2.0,
            heading_error: heading,
            lane_offset: heading,
            rays,
            nearest: near.into_iter().map(|(a, b, c)| [a, b, c]).collect(),
            crosswalk_distance: cw,
            event_counts: [0.0; 6],
            feedback: vec![],
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_normalize(obs in arb_obs(), seed in 0u64..1000, scale in 0.1..20.0f64) {
        let mut p = Policy::new(
            PolicyArch::Mlp { hidden: 6 },
            PolicyInput::Observation { sensor: SensorConfig::default() },
            ActionBins::default(),
            0.5,
            seed,
        ).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.params.iter_mut().for_each(|w| *w = scale * rng.random_range(-1.0..1.0));
        let probs = p.probs_obs(&obs).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(probs.iter().all(|v| *v >= 0.0));
        let x = p.features(&obs).unwrap();
        prop_assert!(p.log_probs(&x).iter().all(|l| l.is_finite() && *l <= 0.0));
    }

    #[test]
    fn kl_is_non_negative(seed in 0u64..10_000, scale in 0.01..30.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Policy::new(PolicyArch::Linear, PolicyInput::Raw { dim: 3 }, ActionBins::default(), 1.0, 0).unwrap();
        let (mut a, mut b) = (base.clone(), base);
        a.params.iter_mut().for_each(|w| *w = scale * rng.random_range(-1.0..1.0));
        b.params.iter_mut().for_each(|w| *w = scale * rng.random_range(-1.0..1.0));
        let states: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        prop_assert!(kl_exact(&a, &b, &states) >= -1e-12);
        prop_assert_eq!(kl_exact(&a, &a, &states), 0.0);
    }
}
