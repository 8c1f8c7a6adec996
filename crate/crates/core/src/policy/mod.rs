//! Softmax driving policies, behavior cloning, the KL-regularized objective and
//! its score-function optimizer.

mod bc;
mod driving;
mod net;

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bc::{behavior_clone, cross_entropy, BcConfig, BcReport, Demonstration};
pub use driving::{evaluate, is_safety_event, run_learned, DrivingEnv, EvalConfig, EvalReport, EvalRow, ScenarioMetrics};
pub use net::{
    log_softmax, Policy, PolicyArch, PolicyInput, ReferencePolicy, POLICY_FORMAT_VERSION, PROB_FLOOR,
};

use crate::sim::{Action, ActionBins, EventKind, Observation};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no demonstrations")]
    EmptyDemonstrations,
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient {
        iteration: usize,
        trace: Vec<TraceEntry>,
    },
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("{0}")]
    Io(String),
}

/// One decision: policy input, chosen bin, both log-probabilities and the learned reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs: Option<Observation>,
    pub bin: usize,
    pub logp: f64,
    pub logp_sft: f64,
    pub reward: f64,
}

impl Step {
    pub fn log_ratio(&self) -> f64 {
        self.logp - self.logp_sft
    }
}

/// Steps from one rollout of the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub scenario: String,
    pub seed: u64,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub events: BTreeMap<EventKind, usize>,
    #[serde(default)]
    pub distance: f64,
    #[serde(default)]
    pub collided: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveEstimate {
    pub reward_term: f64,
    pub kl_term: f64,
    pub combined: f64,
    pub beta: f64,
    pub samples: usize,
}

impl ObjectiveEstimate {
    /// Weighted form: each entry is `(weight, log_ratio, reward)`; weights are normalized.
    pub fn weighted(entries: impl IntoIterator<Item = (f64, f64, f64)>, beta: f64) -> Self {
        let (mut w, mut r, mut k, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (wi, lr, ri) in entries {
            w += wi;
            r += wi * ri;
            k += wi * lr;
            n += 1;
        }
        let (reward_term, kl_term) = if w > 0.0 { (r / w, k / w) } else { (0.0, 0.0) };
        Self {
            reward_term,
            kl_term,
            combined: reward_term - beta * kl_term,
            beta,
            samples: n,
        }
    }

    pub fn from_steps<'a>(steps: impl IntoIterator<Item = &'a Step>, beta: f64) -> Self {
        Self::weighted(steps.into_iter().map(|s| (1.0, s.log_ratio(), s.reward)), beta)
    }

    /// Enumerates every action at a single input instead of sampling.
    pub fn exact(policy: &Policy, sft: &Policy, x: &[f64], rewards: &[f64], beta: f64) -> Self {
        let p = policy.probs(x);
        let lp = policy.log_probs(x);
        let lq = sft.log_probs(x);
        Self::weighted((0..p.len()).map(|y| (p[y], lp[y] - lq[y], rewards[y])), beta)
    }
}

pub fn objective_estimate(batch: &RolloutBatch, beta: f64) -> ObjectiveEstimate {
    ObjectiveEstimate::from_steps(&batch.steps, beta)
}

fn check_compatible(policy: &Policy, sft: &Policy) -> Result<(), PolicyError> {
    if policy.bins != sft.bins || policy.input != sft.input {
        return Err(PolicyError::DimensionMismatch(
            "policy and reference disagree on action bins or inputs".into(),
        ));
    }
    Ok(())
}

/// `KL(policy || sft)` at one input, with the probability floor applied.
pub fn kl_at(policy: &Policy, sft: &Policy, x: &[f64]) -> f64 {
    let p = policy.probs(x);
    let lp = policy.log_probs(x);
    let lq = sft.log_probs(x);
    let kl: f64 = (0..p.len()).map(|y| p[y] * (lp[y] - lq[y])).sum();
    kl.max(0.0)
}

/// Mean exact KL over a set of policy inputs; 0 for an empty set.
pub fn kl_exact(policy: &Policy, sft: &Policy, states: &[Vec<f64>]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    states.iter().map(|x| kl_at(policy, sft, x)).sum::<f64>() / states.len() as f64
}

pub fn kl_exact_obs(policy: &Policy, sft: &Policy, states: &[Observation]) -> Result<f64, PolicyError> {
    check_compatible(policy, sft)?;
    let xs = states.iter().map(|o| policy.features(o)).collect::<Result<Vec<_>, _>>()?;
    Ok(kl_exact(policy, sft, &xs))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    #[default]
    BatchMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub rollouts: usize,
    pub horizon: usize,
    pub baseline: Baseline,
    pub seed: u64,
    /// Discount on the shaped reward-to-go.
    pub gamma: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 0.05,
            iterations: 20,
            rollouts: 12,
            horizon: 200,
            baseline: Baseline::BatchMean,
            seed: 0,
            gamma: 0.95,
            optimizer: Optimizer::ADAM,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidConfig(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be finite and >= 0", self.beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.iterations == 0 || self.rollouts == 0 || self.horizon == 0 {
            return bad("iterations, rollouts and horizon must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} must be in (0, 1]", self.gamma));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad("adam moments must be in [0, 1) and eps > 0".into());
            }
        }
        Ok(())
    }
}

/// Something the policy can be rolled out in.
pub trait Environment: Sync {
    /// Number of distinct scenarios; rollout `k` of an iteration uses slot `k % slots()`.
    fn slots(&self) -> usize;
    fn rollout(
        &self,
        policy: &Policy,
        sft: &Policy,
        slot: usize,
        seed: u64,
        horizon: usize,
    ) -> Result<RolloutBatch, PolicyError>;
}

pub fn sample_bin(probs: &[f64], rng: &mut impl Rng) -> usize {
    match WeightedIndex::new(probs) {
        Ok(w) => rng.sample(w),
        Err(_) => 0,
    }
}

/// Single-state bandit with a fixed reward per action.
#[derive(Clone, Debug)]
pub struct BanditEnv {
    pub rewards: Vec<f64>,
}

impl BanditEnv {
    pub const INPUT: [f64; 1] = [1.0];

    pub fn new(rewards: Vec<f64>) -> Self {
        Self { rewards }
    }

    /// Uniform policy over `rewards.len()` placeholder bins.
    pub fn uniform_policy(&self, arch: PolicyArch) -> Result<Policy, PolicyError> {
        let bins = (0..self.rewards.len())
            .map(|i| Action::new(0.0, (i as f64 / self.rewards.len() as f64).min(1.0), 0.0))
            .collect();
        let bins = ActionBins::new(bins).map_err(|e| PolicyError::InvalidConfig(e.to_string()))?;
        Policy::new(arch, PolicyInput::Raw { dim: 1 }, bins, 1.0, 0)
    }

    /// `pi*(y) ~ pi_sft(y) exp(r(y) / beta)`; the argmax set for `beta = 0`.
    pub fn closed_form(&self, sft: &[f64], beta: f64) -> Vec<f64> {
        if beta == 0.0 {
            let m = self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = self
                .rewards
                .iter()
                .zip(sft)
                .map(|(r, q)| if *r == m { *q } else { 0.0 })
                .collect();
            let s: f64 = w.iter().sum();
            return w.iter().map(|v| v / s).collect();
        }
        let z: Vec<f64> = self.rewards.iter().zip(sft).map(|(r, q)| q.ln() + r / beta).collect();
        log_softmax(&z).into_iter().map(f64::exp).collect()
    }
}

impl Environment for BanditEnv {
    fn slots(&self) -> usize {
        1
    }

    fn rollout(&self, policy: &Policy, sft: &Policy, _slot: usize, seed: u64, _horizon: usize) -> Result<RolloutBatch, PolicyError> {
        if policy.n_actions() != self.rewards.len() {
            return Err(PolicyError::DimensionMismatch("bandit reward count != action bins".into()));
        }
        let x = Self::INPUT.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bin = sample_bin(&policy.probs(&x), &mut rng);
        let step = Step {
            logp: policy.log_probs(&x)[bin],
            logp_sft: sft.log_probs(&x)[bin],
            reward: self.rewards[bin],
            x,
            obs: None,
            bin,
        };
        Ok(RolloutBatch {
            scenario: "bandit".into(),
            seed,
            steps: vec![step],
            events: BTreeMap::new(),
            distance: 0.0,
            collided: false,
        })
    }
}

/// Discounted reward-to-go of the shaped per-step reward.
pub fn shaped_returns(steps: &[Step], beta: f64, gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; steps.len()];
    let mut acc = 0.0;
    for (t, s) in steps.iter().enumerate().rev() {
        acc = s.reward - beta * s.log_ratio() + gamma * acc;
        g[t] = acc;
    }
    g
}

/// Score-function gradient estimate, averaged over all steps of all batches.
pub fn policy_gradient(
    policy: &Policy,
    batches: &[RolloutBatch],
    beta: f64,
    gamma: f64,
    baseline: Baseline,
) -> Vec<f64> {
    let returns: Vec<Vec<f64>> = batches.iter().map(|b| shaped_returns(&b.steps, beta, gamma)).collect();
    let n: usize = returns.iter().map(Vec::len).sum();
    let mut g = vec![0.0; policy.params.len()];
    if n == 0 {
        return g;
    }
    let b = match baseline {
        Baseline::None => 0.0,
        Baseline::BatchMean => returns.iter().flatten().sum::<f64>() / n as f64,
    };
    for (batch, ret) in batches.iter().zip(&returns) {
        for (s, gt) in batch.steps.iter().zip(ret) {
            policy.accumulate_grad_log_prob(&s.x, s.bin, (gt - b) / n as f64, &mut g);
        }
    }
    g
}

/// Expectation of the estimator at a single input, enumerating actions
/// instead of sampling them.
pub fn expected_policy_gradient(policy: &Policy, sft: &Policy, x: &[f64], rewards: &[f64], beta: f64) -> Vec<f64> {
    let p = policy.probs(x);
    let lp = policy.log_probs(x);
    let lq = sft.log_probs(x);
    let mut g = vec![0.0; policy.params.len()];
    for y in 0..p.len() {
        let shaped = rewards[y] - beta * (lp[y] - lq[y]);
        policy.accumulate_grad_log_prob(x, y, p[y] * shaped, &mut g);
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub estimate: ObjectiveEstimate,
    /// Exact KL averaged over the states visited this iteration.
    pub kl_exact: f64,
    pub events: BTreeMap<EventKind, usize>,
    pub collisions: usize,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub policy: Policy,
    pub trace: Vec<TraceEntry>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Seeds for the rollouts of one iteration.
pub fn rollout_seeds(seed: u64, iteration: usize, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Runs all rollouts of one iteration concurrently against a frozen snapshot.
pub fn collect_rollouts(
    env: &dyn Environment,
    policy: &Policy,
    sft: &Policy,
    seeds: &[u64],
    horizon: usize,
) -> Result<Vec<RolloutBatch>, PolicyError> {
    let slots = env.slots().max(1);
    seeds
        .par_iter()
        .enumerate()
        .map(|(k, &s)| env.rollout(policy, sft, k % slots, s, horizon))
        .collect()
}

/// KL-regularized policy-gradient ascent starting from a copy of `sft`.
pub fn optimize(
    sft: &ReferencePolicy,
    env: &dyn Environment,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome, PolicyError> {
    cfg.validate()?;
    let reference = sft.policy();
    let mut policy = reference.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut adam = AdamState {
        m: vec![0.0; policy.params.len()],
        v: vec![0.0; policy.params.len()],
        t: 0,
    };
    for it in 0..cfg.iterations {
        let seeds = rollout_seeds(cfg.seed, it, cfg.rollouts);
        let batches = collect_rollouts(env, &policy, reference, &seeds, cfg.horizon)?;
        let estimate = ObjectiveEstimate::from_steps(batches.iter().flat_map(|b| &b.steps), cfg.beta);
        let states: Vec<Vec<f64>> = batches.iter().flat_map(|b| b.steps.iter().map(|s| s.x.clone())).collect();
        let mut events = BTreeMap::new();
        for b in &batches {
            for (k, n) in &b.events {
                *events.entry(*k).or_insert(0) += n;
            }
        }
        let grad = policy_gradient(&policy, &batches, cfg.beta, cfg.gamma, cfg.baseline);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        trace.push(TraceEntry {
            iteration: it,
            estimate,
            kl_exact: kl_exact(&policy, reference, &states),
            events,
            collisions: batches.iter().filter(|b| b.collided).count(),
            grad_norm,
        });
        if !grad_norm.is_finite() {
            return Err(PolicyError::NonFiniteGradient { iteration: it, trace });
        }
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in policy.params.iter_mut().zip(&grad) {
                    *p += cfg.learning_rate * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                adam.t += 1;
                let c1 = 1.0 - beta1.powi(adam.t);
                let c2 = 1.0 - beta2.powi(adam.t);
                for i in 0..grad.len() {
                    adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * grad[i];
                    adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    policy.params[i] += cfg.learning_rate * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + eps);
                }
            }
        }
        if !policy.is_finite() {
            return Err(PolicyError::NonFiniteGradient { iteration: it, trace });
        }
        log::debug!(
            "iteration {it}: objective {:.4} reward {:.4} kl {:.4}",
            estimate.combined,
            estimate.reward_term,
            estimate.kl_term
        );
    }
    Ok(TrainingOutcome { policy, trace })
}
