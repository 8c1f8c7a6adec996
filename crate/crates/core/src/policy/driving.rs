use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kl_exact, Environment, Policy, PolicyError, RolloutBatch, Step};
use crate::agents::LearnedController;
use crate::feedback::{align_ticks, synthesize_episode, PhysioParams};
use crate::reward::{score_stress, slice_agent_segments, RewardModel};
use crate::scenario::{InstanceOptions, Scenario};
use crate::sim::{AgentId, EpisodeLog, EventKind, Termination};

/// Rolls the ego of each scenario out under the learned policy and scores
/// every step with the reward model.
pub struct DrivingEnv {
    pub scenarios: Vec<Scenario>,
    pub reward: Arc<RewardModel>,
}

impl DrivingEnv {
    pub fn new(scenarios: Vec<Scenario>, reward: Arc<RewardModel>) -> Result<Self, PolicyError> {
        if scenarios.is_empty() {
            return Err(PolicyError::InvalidConfig("scenario set is empty".into()));
        }
        for s in &scenarios {
            if s.ego().is_none() {
                return Err(PolicyError::InvalidConfig(format!("scenario {} has no ego", s.name())));
            }
            if s.spec.world.sensor != reward.feature_map.sensor {
                return Err(PolicyError::DimensionMismatch(format!(
                    "scenario {} sensor differs from the reward model's",
                    s.name()
                )));
            }
        }
        Ok(Self { scenarios, reward })
    }
}

/// Runs one episode with a learned ego; other agents keep their bindings.
pub fn run_learned(
    scenario: &Scenario,
    policy: &Policy,
    seed: u64,
    greedy: bool,
    max_ticks: Option<u64>,
) -> Result<EpisodeLog, PolicyError> {
    let mut opts = InstanceOptions::new(seed);
    opts.ego = Some(Box::new(LearnedController::new(Arc::new(policy.clone()), seed, greedy)));
    opts.max_ticks = max_ticks;
    let log = scenario
        .instantiate(opts)
        .and_then(|i| i.run())
        .map_err(|e| PolicyError::Simulation(e.to_string()))?;
    if let Termination::Aborted { diagnostic } = &log.footer.termination {
        return Err(PolicyError::Simulation(diagnostic.clone()));
    }
    Ok(log)
}

fn ego_steps(
    log: &EpisodeLog,
    ego: AgentId,
    policy: &Policy,
    sft: &Policy,
    reward: &RewardModel,
) -> Result<Vec<Step>, PolicyError> {
    let mut steps = Vec::with_capacity(log.ticks.len());
    for (i, rec) in log.ticks.iter().enumerate() {
        let (Some(obs), Some(action)) = (log.outcome_observation(i, ego), rec.actions.get(&ego)) else {
            continue;
        };
        let bin = policy.bins.bin_of(action);
        let x = policy.features(&obs)?;
        let r = reward
            .reward_bin(&obs, bin)
            .map_err(|e| PolicyError::DimensionMismatch(e.to_string()))?;
        steps.push(Step {
            logp: policy.log_probs(&x)[bin],
            logp_sft: sft.log_probs(&x)[bin],
            reward: r,
            x,
            obs: None,
            bin,
        });
    }
    Ok(steps)
}

fn distance(log: &EpisodeLog, ego: AgentId) -> f64 {
    log.ticks
        .iter()
        .filter_map(|t| t.agents.iter().find(|a| a.id == ego))
        .map(|a| a.speed * log.header.dt)
        .sum()
}

fn batch_from_log(
    log: &EpisodeLog,
    scenario: &Scenario,
    policy: &Policy,
    sft: &Policy,
    reward: &RewardModel,
) -> Result<RolloutBatch, PolicyError> {
    let ego = scenario.ego().expect("checked in DrivingEnv::new");
    let events = log.event_counts(ego);
    Ok(RolloutBatch {
        scenario: scenario.name().to_string(),
        seed: log.header.seed,
        steps: ego_steps(log, ego, policy, sft, reward)?,
        collided: events.get(&EventKind::Collision).copied().unwrap_or(0) > 0,
        distance: distance(log, ego),
        events,
    })
}

impl Environment for DrivingEnv {
    fn slots(&self) -> usize {
        self.scenarios.len()
    }

    fn rollout(&self, policy: &Policy, sft: &Policy, slot: usize, seed: u64, horizon: usize) -> Result<RolloutBatch, PolicyError> {
        let scenario = &self.scenarios[slot % self.scenarios.len()];
        let log = run_learned(scenario, policy, seed, false, Some(horizon as u64))?;
        batch_from_log(&log, scenario, policy, sft, &self.reward)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Overrides each scenario's `max_ticks`.
    pub horizon: Option<u64>,
    pub greedy: bool,
    pub physio: PhysioParams,
    pub noise: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: None,
            greedy: false,
            physio: PhysioParams::default(),
            noise: 0.0,
        }
    }
}

/// One (scenario, seed) episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub mean_reward: f64,
    pub collided: bool,
    pub events: BTreeMap<EventKind, usize>,
    pub safety_events: usize,
    pub distance: f64,
    pub kl_exact: f64,
    pub mean_stress: f64,
}

/// Means over episodes; `collision_rate` is the fraction that collided.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub scenario: String,
    pub episodes: usize,
    pub mean_reward: f64,
    pub collision_rate: f64,
    pub events: BTreeMap<EventKind, f64>,
    pub safety_events: f64,
    pub distance: f64,
    pub kl_exact: f64,
    pub mean_stress: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub per_scenario: Vec<ScenarioMetrics>,
    /// Unweighted mean of the per-scenario values.
    pub aggregate: ScenarioMetrics,
}

pub fn is_safety_event(kind: EventKind) -> bool {
    matches!(kind, EventKind::Collision | EventKind::FailureToYield | EventKind::NearMiss)
}

fn eval_episode(
    scenario: &Scenario,
    seed: u64,
    policy: &Policy,
    sft: &Policy,
    reward: &RewardModel,
    cfg: &EvalConfig,
) -> Result<EvalRow, PolicyError> {
    let log = run_learned(scenario, policy, seed, cfg.greedy, cfg.horizon)?;
    let batch = batch_from_log(&log, scenario, policy, sft, reward)?;
    let ego = scenario.ego().expect("checked");
    let n = batch.steps.len();
    let mean_reward = if n == 0 { 0.0 } else { batch.steps.iter().map(|s| s.reward).sum::<f64>() / n as f64 };
    let states: Vec<Vec<f64>> = batch.steps.iter().map(|s| s.x.clone()).collect();
    let channels = synthesize_episode(&log, ego, &cfg.physio, seed, cfg.noise)
        .map_err(|e| PolicyError::Simulation(e.to_string()))?;
    let features = align_ticks(&channels, log.header.dt, log.ticks.len());
    let segs = slice_agent_segments(&log, ego, &features, scenario.spec.segment_len);
    let mean_stress = if segs.is_empty() {
        0.0
    } else {
        segs.iter().map(|s| score_stress(s, &scenario.spec.stress).stress).sum::<f64>() / segs.len() as f64
    };
    Ok(EvalRow {
        scenario: batch.scenario,
        seed,
        steps: n,
        mean_reward,
        collided: batch.collided,
        safety_events: batch.events.iter().filter(|(k, _)| is_safety_event(**k)).map(|(_, v)| v).sum(),
        events: batch.events,
        distance: batch.distance,
        kl_exact: kl_exact(policy, sft, &states),
        mean_stress,
    })
}

fn summarize(name: &str, rows: &[&EvalRow]) -> ScenarioMetrics {
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    ScenarioMetrics {
        scenario: name.to_string(),
        episodes: rows.len(),
        mean_reward: mean(&|r| r.mean_reward),
        collision_rate: mean(&|r| if r.collided { 1.0 } else { 0.0 }),
        events: EventKind::ALL
            .iter()
            .map(|k| (*k, mean(&|r| r.events.get(k).copied().unwrap_or(0) as f64)))
            .collect(),
        safety_events: mean(&|r| r.safety_events as f64),
        distance: mean(&|r| r.distance),
        kl_exact: mean(&|r| r.kl_exact),
        mean_stress: mean(&|r| r.mean_stress),
    }
}

fn average(metrics: &[ScenarioMetrics]) -> ScenarioMetrics {
    let n = metrics.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ScenarioMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    ScenarioMetrics {
        scenario: "aggregate".into(),
        episodes: metrics.iter().map(|m| m.episodes).sum(),
        mean_reward: mean(&|m| m.mean_reward),
        collision_rate: mean(&|m| m.collision_rate),
        events: EventKind::ALL
            .iter()
            .map(|k| (*k, mean(&|m| m.events.get(k).copied().unwrap_or(0.0))))
            .collect(),
        safety_events: mean(&|m| m.safety_events),
        distance: mean(&|m| m.distance),
        kl_exact: mean(&|m| m.kl_exact),
        mean_stress: mean(&|m| m.mean_stress),
    }
}

/// Runs every (scenario, seed) pair concurrently; rows come back in
/// scenario-major, seed-minor order.
pub fn evaluate(
    policy: &Policy,
    sft: &Policy,
    scenarios: &[Scenario],
    seeds: &[u64],
    reward: &RewardModel,
    cfg: &EvalConfig,
) -> Result<EvalReport, PolicyError> {
    if scenarios.is_empty() || seeds.is_empty() {
        return Err(PolicyError::InvalidConfig("evaluation needs at least one scenario and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |s| (i, *s))).collect();
    let rows = jobs
        .par_iter()
        .map(|(i, s)| eval_episode(&scenarios[*i], *s, policy, sft, reward, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let per_scenario: Vec<ScenarioMetrics> = scenarios
        .iter()
        .map(|sc| {
            let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.scenario == sc.name()).collect();
            summarize(sc.name(), &mine)
        })
        .collect();
    let aggregate = average(&per_scenario);
    Ok(EvalReport {
        rows,
        per_scenario,
        aggregate,
    })
}
