//! Stage-to-stage glue: demonstrations and behavior cloning, synthetic
//! labelling of episodes, reward fitting from rollouts.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{align_ticks, synthesize_episode, AlignedFeatures, FeedbackChannels, PhysioParams};
use crate::policy::{
    behavior_clone, run_learned, BcConfig, BcReport, Demonstration, Policy, PolicyArch, PolicyError,
    PolicyInput, ReferencePolicy,
};
use crate::reward::{
    fit_reward, make_pairs, score_stress, slice_agent_segments, EpisodeSegment, FeatureMap, FitConfig, FitReport,
    PairingConfig, PreferencePair, RewardModel, StressScore,
};
use crate::scenario::Scenario;
use crate::sim::{ActionBins, EpisodeLog, Observation};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] crate::reward::RewardError),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Feedback(#[from] crate::feedback::FeedbackError),
    #[error("{0}")]
    Invalid(String),
}

/// Ego (observation, bin) pairs from each scenario run with its own bindings.
pub fn scripted_demonstrations(
    scenarios: &[Scenario],
    seeds: &[u64],
    bins: &ActionBins,
) -> Result<Vec<(Observation, usize)>, PipelineError> {
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |s| (i, *s))).collect();
    let logs = jobs
        .par_iter()
        .map(|(i, s)| scenarios[*i].run(*s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut demos = Vec::new();
    for log in &logs {
        let Some(ego) = log.ego() else { continue };
        for rec in &log.ticks {
            if let (Some(o), Some(a)) = (rec.observations.get(&ego), rec.actions.get(&ego)) {
                demos.push((o.clone(), bins.bin_of(a)));
            }
        }
    }
    Ok(demos)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub arch: PolicyArch,
    pub temperature: f64,
    pub demo_seeds: Vec<u64>,
    pub bc: BcConfig,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            arch: PolicyArch::Linear,
            temperature: 1.0,
            demo_seeds: (0..6).collect(),
            bc: BcConfig::default(),
        }
    }
}

/// Behavior-clones the scenarios' scripted ego drivers.
pub fn clone_reference(
    scenarios: &[Scenario],
    cfg: &ReferenceConfig,
) -> Result<(ReferencePolicy, BcReport), PipelineError> {
    let sensor = scenarios
        .first()
        .ok_or_else(|| PipelineError::Invalid("no scenarios".into()))?
        .spec
        .world
        .sensor
        .clone();
    let bins = ActionBins::default();
    let mut init = Policy::new(cfg.arch, PolicyInput::Observation { sensor }, bins.clone(), cfg.temperature, 0)?;
    let pairs = scripted_demonstrations(scenarios, &cfg.demo_seeds, &bins)?;
    let raw = pairs.iter().map(|(o, _)| init.features(o)).collect::<Result<Vec<_>, _>>()?;
    init.fit_input_standardization(&raw);
    let demos = pairs
        .into_iter()
        .map(|(o, bin)| Ok(Demonstration { x: init.features(&o)?, bin }))
        .collect::<Result<Vec<_>, PolicyError>>()?;
    let names: Vec<&str> = scenarios.iter().map(|s| s.name()).collect();
    let provenance = format!("behavior-cloned from scripted ego drivers in {} over seeds {:?}", names.join(", "), cfg.demo_seeds);
    Ok(behavior_clone(init, &demos, &cfg.bc, &provenance)?)
}

/// An episode with synthetic physiology, per-tick features and scored segments.
#[derive(Clone, Debug)]
pub struct LabeledEpisode {
    pub log: EpisodeLog,
    pub channels: FeedbackChannels,
    pub features: Vec<AlignedFeatures>,
    pub segments: Vec<EpisodeSegment>,
    pub scores: Vec<StressScore>,
}

pub fn label_episode(
    log: EpisodeLog,
    scenario: &Scenario,
    physio: &PhysioParams,
    seed: u64,
    noise: f64,
) -> Result<LabeledEpisode, PipelineError> {
    let ego = log.ego().ok_or_else(|| PipelineError::Invalid(format!("episode {} has no ego", log.header.episode_id)))?;
    let channels = synthesize_episode(&log, ego, physio, seed, noise)?;
    let features = align_ticks(&channels, log.header.dt, log.ticks.len());
    let segments = slice_agent_segments(&log, ego, &features, scenario.spec.segment_len);
    let scores = segments.iter().map(|s| score_stress(s, &scenario.spec.stress)).collect();
    Ok(LabeledEpisode {
        log,
        channels,
        features,
        segments,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardDataConfig {
    pub episodes_per_scenario: usize,
    /// Sampling temperatures multiplied into the reference policy, cycled per episode.
    pub temperature_scales: Vec<f64>,
    pub physio: PhysioParams,
    pub noise: f64,
    pub pairing: PairingConfig,
    pub fit: FitConfig,
    pub include_feedback: bool,
}

impl Default for RewardDataConfig {
    fn default() -> Self {
        Self {
            episodes_per_scenario: 8,
            temperature_scales: vec![1.0, 2.5],
            physio: PhysioParams::default(),
            noise: 0.0,
            pairing: PairingConfig::default(),
            fit: FitConfig::default(),
            include_feedback: false,
        }
    }
}

/// Rolls the reference out at several temperatures and labels every episode.
pub fn sample_labeled_episodes(
    scenarios: &[Scenario],
    reference: &Policy,
    cfg: &RewardDataConfig,
    seed: u64,
) -> Result<Vec<LabeledEpisode>, PipelineError> {
    if cfg.temperature_scales.is_empty() || cfg.temperature_scales.iter().any(|t| !(*t > 0.0)) {
        return Err(PipelineError::Invalid("temperature scales must be > 0".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|i| (0..cfg.episodes_per_scenario).map(move |k| (i, k)))
        .collect();
    jobs.par_iter()
        .map(|&(i, k)| {
            let mut pol = reference.clone();
            pol.temperature *= cfg.temperature_scales[k % cfg.temperature_scales.len()];
            let ep_seed = seed.wrapping_mul(1_000_003).wrapping_add((i * 10_007 + k) as u64);
            let log = run_learned(&scenarios[i], &pol, ep_seed, false, None)?;
            label_episode(log, &scenarios[i], &cfg.physio, ep_seed, cfg.noise)
        })
        .collect()
}

/// Segments, scores and pairs gathered from labelled episodes.
#[derive(Clone, Debug, Default)]
pub struct PreferenceData {
    pub segments: Vec<EpisodeSegment>,
    pub scores: Vec<StressScore>,
    pub pairs: Vec<PreferencePair>,
}

pub fn preference_data(episodes: &[LabeledEpisode], pairing: &PairingConfig, seed: u64) -> PreferenceData {
    let segments: Vec<EpisodeSegment> = episodes.iter().flat_map(|e| e.segments.iter().cloned()).collect();
    let scores: Vec<StressScore> = episodes.iter().flat_map(|e| e.scores.iter().cloned()).collect();
    let pairs = make_pairs(&scores, pairing, seed);
    PreferenceData { segments, scores, pairs }
}

pub fn fit_reward_model(
    data: &PreferenceData,
    sensor: &crate::sim::SensorConfig,
    include_feedback: bool,
    fit: &FitConfig,
) -> Result<(RewardModel, FitReport), PipelineError> {
    let fmap = FeatureMap::new(sensor.clone(), ActionBins::default(), include_feedback);
    Ok(fit_reward(&data.pairs, &data.segments, fmap, fit)?)
}

/// Reward model fitted on synthetic preferences over reference rollouts.
pub fn reward_from_rollouts(
    scenarios: &[Scenario],
    reference: &Policy,
    cfg: &RewardDataConfig,
    seed: u64,
) -> Result<(Arc<RewardModel>, FitReport, PreferenceData), PipelineError> {
    let episodes = sample_labeled_episodes(scenarios, reference, cfg, seed)?;
    let data = preference_data(&episodes, &cfg.pairing, seed);
    let sensor = &scenarios[0].spec.world.sensor;
    let mut fit = cfg.fit.clone();
    fit.seed = seed;
    let (model, report) = fit_reward_model(&data, sensor, cfg.include_feedback, &fit)?;
    Ok((Arc::new(model), report, data))
}

/// Learned-reward range over reference rollouts and the KL budget
/// `2 * (max - min) / beta` a trained policy is held to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlBudget {
    pub reward_min: f64,
    pub reward_max: f64,
    pub beta: f64,
    /// Infinite when beta is 0.
    pub budget: f64,
}

impl KlBudget {
    pub fn from_rewards(rewards: impl IntoIterator<Item = f64>, beta: f64) -> Self {
        let (lo, hi) = rewards
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
        let (lo, hi) = if lo > hi { (0.0, 0.0) } else { (lo, hi) };
        let budget = if beta > 0.0 { 2.0 * (hi - lo) / beta } else { f64::INFINITY };
        Self {
            reward_min: lo,
            reward_max: hi,
            beta,
            budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_budget_scales_with_inverse_beta() {
        let b = KlBudget::from_rewards([0.5, -1.0, 2.0], 0.5);
        assert_eq!((b.reward_min, b.reward_max), (-1.0, 2.0));
        assert_eq!(b.budget, 12.0);
        assert!(KlBudget::from_rewards([1.0], 0.0).budget.is_infinite());
        assert_eq!(KlBudget::from_rewards([], 1.0).budget, 0.0);
    }
}
