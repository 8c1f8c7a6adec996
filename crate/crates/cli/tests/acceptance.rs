//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use hfdrive::feedback::{generate_physiology, synthesize_episode, Modality, PhysioParams};
use hfdrive::llm::{AdapterConfig, LlmAdapter, ProviderKind};
use hfdrive::pipeline::{clone_reference, preference_data, reward_from_rollouts, sample_labeled_episodes, fit_reward_model, KlBudget, PreferenceData, ReferenceConfig, RewardDataConfig};
use hfdrive::policy::*;
use hfdrive::reward::{FeatureMap, PairData, PreferenceDataset, PreferenceLabel, RewardArch, RewardModel};
use hfdrive::scenario::{parse_scenario, standard, standard_suite, InstanceOptions};
use hfdrive::sim::{Action, ActionBins, AgentId};
use hfdrive_gateway::{replay_session, Body, ControlPayload, SegmentIndex, SessionCore, SessionOptions, SessionStatus, WireMessage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn bandit_cfg(beta: f64, seed: u64) -> TrainingConfig {
    TrainingConfig {
        beta,
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

fn bandit_closed_form() -> Verdict {
    let env = BanditEnv::new(vec![1.0, 0.0]);
    let sft = ReferencePolicy::new(env.uniform_policy(PolicyArch::Linear).unwrap(), "uniform");
    let runs: Vec<(f64, u64)> = [0.25, 0.5, 1.0, 2.0].iter().flat_map(|&b| (0..5).map(move |s| (b, s))).collect();
    let worst = runs
        .par_iter()
        .map(|&(beta, seed)| {
            let out = optimize(&sft, &env, &bandit_cfg(beta, seed)).unwrap();
            // uniform reference: pi*(0) = e^(1/beta) / (1 + e^(1/beta))
            let w = (1.0 / beta).exp();
            let star = [w / (1.0 + w), 1.0 / (1.0 + w)];
            tv(&out.policy.probs(&BanditEnv::INPUT), &star)
        })
        .reduce(|| 0.0, f64::max);
    verdict(worst <= 0.02, format!("worst TV {worst:.4} over 4 betas x 5 seeds"))
}

fn objective_identity() -> Verdict {
    let mut bad = 0;
    let mut checked = 0;
    let mut check = |trace: &[TraceEntry]| {
        for t in trace {
            let e = t.estimate;
            checked += 1;
            if e.combined != e.reward_term - e.beta * e.kl_term {
                bad += 1;
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..4 {
        let env = BanditEnv::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
        let sft = ReferencePolicy::new(env.uniform_policy(PolicyArch::Linear).unwrap(), "uniform");
        let mut cfg = bandit_cfg([0.0, 0.3, 1.0, 4.0][k], k as u64);
        cfg.iterations = 40;
        check(&optimize(&sft, &env, &cfg).unwrap().trace);
    }

    let suite = vec![standard("car-following").unwrap()];
    let mut rc = ReferenceConfig::default();
    rc.bc.epochs = 60;
    let (sft, _) = clone_reference(&suite, &rc).unwrap();
    let map = FeatureMap::new(suite[0].spec.world.sensor.clone(), ActionBins::default(), false);
    let mut rm = RewardModel::zeros(map, RewardArch::Linear);
    rm.theta.iter_mut().for_each(|t| *t = rng.random_range(-0.5..0.5));
    let env = DrivingEnv::new(suite, Arc::new(rm)).unwrap();
    let mut degenerate = true;
    for beta in [0.0, 0.3] {
        let cfg = TrainingConfig { beta, iterations: 3, rollouts: 4, horizon: 100, seed: 5, ..Default::default() };
        let out = optimize(&sft, &env, &cfg).unwrap();
        check(&out.trace);
        let first = &out.trace[0];
        // iteration 0 samples the reference itself
        degenerate &= first.estimate.kl_term == 0.0 && first.kl_exact == 0.0;
        degenerate &= first.estimate.combined == first.estimate.reward_term;
        if beta == 0.0 {
            degenerate &= out.trace.iter().all(|t| t.estimate.combined == t.estimate.reward_term);
        }
    }
    let bandit = BanditEnv::new(vec![0.2, 0.9]);
    let q = bandit.uniform_policy(PolicyArch::Linear).unwrap();
    let same = ObjectiveEstimate::exact(&q, &q, &BanditEnv::INPUT, &bandit.rewards, 0.7);
    degenerate &= same.kl_term == 0.0 && same.combined == same.reward_term;
    verdict(
        bad == 0 && degenerate,
        format!("{checked} estimates, {bad} off the identity, degenerate cases {}", if degenerate { "exact" } else { "WRONG" }),
    )
}

fn fd_rel(g: f64, fd: f64, floor: f64) -> f64 {
    (g - fd).abs() / fd.abs().max(floor)
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let h = 1e-6;

    // Bradley-Terry loss
    let mut bt = 0.0f64;
    for arch in [RewardArch::Linear, RewardArch::Mlp { hidden: 4 }] {
        let pairs: Vec<PairData> = (0..12)
            .map(|i| {
                let mut rows = |k| (0..k).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                PairData { a: rows(2 + i % 3), b: rows(3), target: [1.0, 0.0, 0.5][i % 3] }
            })
            .collect();
        let data = PreferenceDataset::new(arch, 5, pairs);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..data.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = data.loss_and_grad(&theta, 1e-3);
            for i in 0..theta.len() {
                let (mut a, mut b) = (theta.clone(), theta.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (data.loss(&a, 1e-3) - data.loss(&b, 1e-3)) / (2.0 * h);
                bt = bt.max(fd_rel(g[i], fd, 1e-4));
            }
        }
    }

    // behavior-cloning cross-entropy
    let mut ce = 0.0f64;
    for arch in [PolicyArch::Linear, PolicyArch::Mlp { hidden: 4 }] {
        let base = Policy::new(arch, PolicyInput::Raw { dim: 4 }, ActionBins::default(), 0.7, 1).unwrap();
        let demos: Vec<Demonstration> = (0..12)
            .map(|_| Demonstration {
                x: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bin: rng.random_range(0..base.n_actions()),
            })
            .collect();
        for _ in 0..10 {
            let mut p = base.clone();
            p.params.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            let (_, g) = cross_entropy(&p, &demos, 1e-3);
            for i in 0..p.params.len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a.params[i] += h;
                b.params[i] -= h;
                let fd = (cross_entropy(&a, &demos, 1e-3).0 - cross_entropy(&b, &demos, 1e-3).0) / (2.0 * h);
                ce = ce.max(fd_rel(g[i], fd, 1e-4));
            }
        }
    }

    // score-function estimator, enumerated over the bandit's actions
    let env = BanditEnv::new(vec![1.0, 0.0, 0.3]);
    let x = BanditEnv::INPUT.to_vec();
    let beta = 0.4;
    let mut pg = 0.0f64;
    for arch in [PolicyArch::Linear, PolicyArch::Mlp { hidden: 3 }] {
        let sft = env.uniform_policy(arch).unwrap();
        for _ in 0..10 {
            let mut pol = sft.clone();
            pol.params.iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
            let probs = pol.probs(&x);
            let mut g = vec![0.0; pol.params.len()];
            for (y, py) in probs.iter().enumerate() {
                let step = Step {
                    x: x.clone(),
                    obs: None,
                    bin: y,
                    logp: pol.log_probs(&x)[y],
                    logp_sft: sft.log_probs(&x)[y],
                    reward: env.rewards[y],
                };
                let batch = RolloutBatch {
                    scenario: "bandit".into(),
                    seed: 0,
                    steps: vec![step],
                    events: Default::default(),
                    distance: 0.0,
                    collided: false,
                };
                let gy = policy_gradient(&pol, &[batch], beta, 1.0, Baseline::None);
                g.iter_mut().zip(gy).for_each(|(a, b)| *a += py * b);
            }
            // J = sum_y p(y) (r(y) - beta log(p(y)/q(y)))
            let j = |p: &Policy| {
                let (pp, lp, lq) = (p.probs(&x), p.log_probs(&x), sft.log_probs(&x));
                (0..pp.len()).map(|y| pp[y] * (env.rewards[y] - beta * (lp[y] - lq[y]))).sum::<f64>()
            };
            for i in 0..pol.params.len() {
                let (mut a, mut b) = (pol.clone(), pol.clone());
                a.params[i] += 1e-5;
                b.params[i] -= 1e-5;
                let fd = (j(&a) - j(&b)) / 2e-5;
                pg = pg.max(fd_rel(g[i], fd, 1e-6));
            }
        }
    }
    verdict(
        bt < 1e-4 && ce < 1e-4 && pg < 1e-3,
        format!("max rel err: Bradley-Terry {bt:.1e}, cross-entropy {ce:.1e}, policy gradient {pg:.1e}"),
    )
}

fn end_to_end() -> Verdict {
    let suite = standard_suite();
    let (sft, _) = clone_reference(&suite, &ReferenceConfig::default()).unwrap();
    let rows: Vec<(bool, bool, f64, f64, String)> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let (rm, _, _) = reward_from_rollouts(&suite, sft.policy(), &RewardDataConfig::default(), seed).unwrap();
            let env = DrivingEnv::new(suite.clone(), rm.clone()).unwrap();
            let cfg = TrainingConfig { beta: 0.1, learning_rate: 0.05, iterations: 20, rollouts: 12, horizon: 300, seed, ..Default::default() };
            let first = collect_rollouts(&env, sft.policy(), sft.policy(), &rollout_seeds(seed, 0, cfg.rollouts), cfg.horizon).unwrap();
            let budget = KlBudget::from_rewards(first.iter().flat_map(|b| b.steps.iter().map(|s| s.reward)), cfg.beta);
            let out = optimize(&sft, &env, &cfg).unwrap();
            let seeds: Vec<u64> = (0..16).map(|k| 10_000 + seed * 100 + k).collect();
            let ecfg = EvalConfig::default();
            let rl = evaluate(&out.policy, sft.policy(), &suite, &seeds, &rm, &ecfg).unwrap();
            let base = evaluate(sft.policy(), sft.policy(), &suite, &seeds, &rm, &ecfg).unwrap();
            let safety = |r: &EvalReport| r.rows.iter().map(|x| x.safety_events).sum::<usize>();
            let better = rl.aggregate.mean_reward > base.aggregate.mean_reward;
            let safer = safety(&rl) <= safety(&base);
            let note = format!(
                "seed {seed}: r {:.3}/{:.3} safety {}/{}",
                rl.aggregate.mean_reward,
                base.aggregate.mean_reward,
                safety(&rl),
                safety(&base)
            );
            (better && safer, rl.aggregate.kl_exact <= budget.budget, rl.aggregate.kl_exact, budget.budget, note)
        })
        .collect();
    let wins = rows.iter().filter(|r| r.0).count();
    let within = rows.iter().all(|r| r.1);
    let kl = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let budget = rows.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    let notes: Vec<&str> = rows.iter().map(|r| r.4.as_str()).collect();
    verdict(
        wins >= 4 && within,
        format!("{wins}/5 seeds improve, max KL {kl:.3} vs smallest budget {budget:.1} [{}]", notes.join("; ")),
    )
}

fn reward_recovery() -> Verdict {
    let suite = standard_suite();
    let (sft, _) = clone_reference(&suite, &ReferenceConfig::default()).unwrap();
    let accs: Vec<f64> = (0..3u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = RewardDataConfig { episodes_per_scenario: 16, ..Default::default() };
            let eps = sample_labeled_episodes(&suite, sft.policy(), &cfg, seed).unwrap();
            let data = preference_data(&eps, &cfg.pairing, seed);
            let mut pairs: Vec<_> = data.pairs.iter().filter(|p| p.label != PreferenceLabel::Tie).cloned().collect();
            assert!(pairs.len() >= 300, "only {} ordered pairs", pairs.len());
            pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let train = PreferenceData { pairs: pairs[..200].to_vec(), ..data.clone() };
            let mut fit = cfg.fit.clone();
            fit.seed = seed;
            let (rm, _) = fit_reward_model(&train, &suite[0].spec.world.sensor, cfg.include_feedback, &fit).unwrap();
            let segs: std::collections::BTreeMap<_, _> = data.segments.iter().map(|s| (s.id.clone(), s)).collect();
            let held = &pairs[200..300];
            let ok = held
                .iter()
                .filter(|p| {
                    let ra = rm.segment_return(segs[&p.a]).unwrap();
                    let rb = rm.segment_return(segs[&p.b]).unwrap();
                    (ra > rb) == (p.label == PreferenceLabel::APreferred)
                })
                .count();
            ok as f64 / held.len() as f64
        })
        .collect();
    let worst = accs.iter().copied().fold(1.0, f64::min);
    verdict(worst >= 0.9, format!("held-out accuracy {accs:.2?} (200 train / 100 held out)"))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn beta_monotonicity() -> Verdict {
    let suite = vec![standard("car-following").unwrap()];
    let (sft, _) = clone_reference(&suite, &ReferenceConfig::default()).unwrap();
    let betas = [0.0, 0.03, 0.1, 0.3, 1.0];
    let per_seed: Vec<Vec<f64>> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let (rm, _, _) = reward_from_rollouts(&suite, sft.policy(), &RewardDataConfig::default(), seed).unwrap();
            let env = DrivingEnv::new(suite.clone(), rm).unwrap();
            betas
                .iter()
                .map(|&beta| {
                    let cfg = TrainingConfig { beta, seed, ..Default::default() };
                    optimize(&sft, &env, &cfg).unwrap().trace.last().unwrap().kl_exact
                })
                .collect()
        })
        .collect();
    let medians: Vec<f64> = (0..betas.len())
        .map(|i| {
            let mut v: Vec<f64> = per_seed.iter().map(|s| s[i]).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect();
    let rho = spearman(&betas, &medians);
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    verdict(rho <= 0.0 && monotone, format!("median KL {medians:.4?}, Spearman {rho:.2}"))
}

const BIN: &str = env!("CARGO_BIN_EXE_hfdrive");

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(BIN).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn identical(a: &Path, b: &Path) -> bool {
    if a.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        names.iter().all(|n| identical(&a.join(n), &b.join(n)))
    } else {
        std::fs::read(a).ok() == std::fs::read(b).ok()
    }
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .par_iter()
        .map(|tag| {
            let d = root.path().join(tag);
            std::fs::create_dir(&d).unwrap();
            cli(&d, &["sim", "--scenario", "lane-change-traffic", "--seed", "11", "--out", "ep.ndjson"]);
            cli(&d, &["synth-feedback", "--log", "ep.ndjson", "--seed", "11", "--noise", "0.2", "--out", "fb"]);
            cli(&d, &["train-reward", "--seed", "11", "--out", "reward.json"]);
            cli(&d, &["train-policy", "--reward", "reward.json", "--seed", "11", "--out", "policy"]);
            d
        })
        .collect();
    let outputs = ["ep.ndjson", "fb", "reward.json", "policy"];
    let differing: Vec<&str> = outputs.iter().copied().filter(|o| !identical(&runs[0].join(o), &runs[1].join(o))).collect();

    let sc = standard("pedestrian-crosswalk").unwrap();
    let opts = SessionOptions {
        scenario: sc.name().into(),
        participant: "p-accept".into(),
        seed: Some(12),
        human_agent: None,
    };
    let mut s = SessionCore::new("s0001".into(), &sc, &opts, Arc::new(LlmAdapter::mock()), SegmentIndex::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for t in 0..220 {
        if t % 7 == 0 {
            let a = Action::new(rng.random_range(-0.3..0.3), rng.random_range(0.0..0.8), 0.0);
            s.handle(WireMessage::new(Body::Control(ControlPayload::new(Some(AgentId(0)), a))));
        }
        if !s.step() {
            break;
        }
    }
    s.close(SessionStatus::Closed, &root.path().join("sessions"));
    let replay = replay_session(&root.path().join("sessions/s0001")).unwrap();
    verdict(
        differing.is_empty() && replay.matches(),
        format!(
            "differing outputs {differing:?}, session replay {}",
            if replay.matches() { "matches" } else { "DIVERGES" }
        ),
    )
}

fn channel_rates() -> Verdict {
    let expect = [
        (Modality::Bvp, 64.0),
        (Modality::HeartRate, 1.0),
        (Modality::Eda, 4.0),
        (Modality::WristAccel, 32.0),
        (Modality::Temperature, 4.0),
        (Modality::GazeX, 125.0),
        (Modality::GazeY, 125.0),
    ];
    let mut wrong = Vec::new();
    let mut checked = 0;
    for duration in [0.0, 0.9, 1.0, 7.3, 12.37, 15.0, 61.9] {
        let ch = generate_physiology(&[], duration, &PhysioParams::default(), 3, 0.5).unwrap();
        for (m, rate) in expect {
            checked += 1;
            let got = ch.get(m).map_or(0, |b| b.len());
            if got != (duration * rate).floor() as usize {
                wrong.push(format!("{}@{duration}s={got}", m.name()));
            }
        }
    }
    for (name, seed) in [("car-following", 1), ("pedestrian-crosswalk", 2)] {
        let log = standard(name).unwrap().run(seed).unwrap();
        let ego = log.ego().unwrap();
        let ch = synthesize_episode(&log, ego, &PhysioParams::default(), seed, 0.0).unwrap();
        let want = (log.duration() * 60.0).floor() as usize;
        for m in Modality::VEHICLE {
            checked += 1;
            let got = ch.get(m).map_or(0, |b| b.len());
            if got != want {
                wrong.push(format!("{}@{}s={got}", m.name(), log.duration()));
            }
        }
    }
    verdict(wrong.is_empty(), format!("{checked} channel counts checked, mismatches {wrong:?}"))
}

fn no_network() -> Verdict {
    let text = r#"
name = "persona"
max_ticks = 50

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
spawn = { x = 40.0, y = 0.0, heading = 0.0 }
speed = 8.0
policy = { kind = "llm-persona", persona = "cautious" }
"#;
    let defaults_mock = AdapterConfig::default().provider == ProviderKind::Mock
        && hfdrive_cli::RunConfig::default().llm.provider == ProviderKind::Mock
        && hfdrive_gateway::GatewayConfig::new("unused").adapter.is_mock();
    let adapter = Arc::new(LlmAdapter::from_config(AdapterConfig::default()).unwrap());
    let sc = parse_scenario(text, Path::new(".")).unwrap();
    let mut opts = InstanceOptions::new(4);
    opts.adapter = adapter.clone();
    // stays inside the default request budget, so every tick is served by the mock
    let log = sc.instantiate(opts).unwrap().run().unwrap();
    let fallbacks = log.ticks.iter().filter(|r| r.fallbacks.contains(&AgentId(1))).count();
    let external = AdapterConfig { provider: ProviderKind::External, endpoint: None, ..Default::default() };
    let rejects_unconfigured = LlmAdapter::from_config(external).is_err();
    verdict(
        defaults_mock && adapter.is_mock() && adapter.issued() > 0 && fallbacks == 0 && rejects_unconfigured,
        format!(
            "mock by default {defaults_mock}, {} mock requests over {} ticks, {fallbacks} fallbacks",
            adapter.issued(),
            log.ticks.len()
        ),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("KL-regularized bandit matches closed form", bandit_closed_form),
        ("objective identity and degenerate cases", objective_identity),
        ("gradients match finite differences", gradients),
        ("end-to-end reward and safety improvement", end_to_end),
        ("reward model recovers stress ordering", reward_recovery),
        ("KL non-increasing in beta", beta_monotonicity),
        ("determinism and session replay", determinism),
        ("channel sample counts", channel_rates),
        ("no network with the mock provider", no_network),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} - {name}: {} ({:.1}s)",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
