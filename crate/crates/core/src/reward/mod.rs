//! Segment stress scores, pairwise preferences and the Bradley–Terry reward model.

mod features;
mod interpret;
mod model;
mod pairs;
mod segment;
mod stress;

use thiserror::Error;

pub use features::FeatureMap;
pub use interpret::{apply_adjustments, interpret_via_llm, summarize_pairs};
pub use model::{
    build_dataset, fit_reward, FitConfig, FitReport, PairData, PreferenceDataset, RewardArch,
    RewardModel, MODEL_FORMAT_VERSION,
};
pub use pairs::{
    label_pair, make_pairs, read_pairs, write_pairs, PairingConfig, PairingStrategy,
    PreferenceLabel, PreferencePair, PreferenceSource, PAIRS_FORMAT_VERSION,
};
pub use segment::{
    read_segments, slice_agent_segments, slice_segments, write_segments, EpisodeSegment, SEGMENTS_FORMAT_VERSION,
};
pub use stress::{score_stress, EventPenalties, StressScore, StressWeights};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("no ordering signal: every pair is a tie")]
    NoOrderingSignal,
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pair references unknown segment {0}")]
    DanglingSegment(String),
    #[error("invalid pair: {0}")]
    InvalidPair(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::AlignedFeatures;
    use crate::sim::{Action, ActionBins, AgentId, DrivingEvent, EventKind, Observation, SensorConfig};

    fn obs() -> Observation {
        Observation {
            speed: 10.0,
            long_accel: 0.0,
            lat_accel: 0.0,
            heading_error: 0.0,
            lane_offset: 0.0,
            rays: vec![50.0; 16],
            nearest: vec![[50.0, 0.0, 0.0]; 3],
            crosswalk_distance: 50.0,
            event_counts: [0.0; 6],
            feedback: vec![],
        }
    }

    fn segment(id: &str, n: usize, events: &[EventKind]) -> EpisodeSegment {
        EpisodeSegment {
            id: id.into(),
            episode_id: "e".into(),
            t0: 0,
            t1: n as u64,
            observations: vec![obs(); n],
            actions: vec![Action::IDLE; n],
            features: vec![AlignedFeatures::NEUTRAL; n],
            events: events
                .iter()
                .map(|&kind| DrivingEvent {
                    tick: 0,
                    agent: AgentId(0),
                    kind,
                    magnitude: 5.0,
                    other: None,
                })
                .collect(),
        }
    }

    #[test]
    fn neutral_segment_has_zero_stress() {
        let s = score_stress(&segment("a", 20, &[]), &StressWeights::default());
        assert_eq!(s.stress, 0.0);
    }

    #[test]
    fn extra_hard_brake_raises_stress() {
        let w = StressWeights::default();
        let a = score_stress(&segment("a", 20, &[EventKind::NearMiss]), &w);
        let b = score_stress(&segment("b", 20, &[EventKind::NearMiss, EventKind::HardBrake]), &w);
        assert!(b.stress > a.stress);
    }

    #[test]
    fn full_comfort_gives_minus_rating_weight() {
        let w = StressWeights::default();
        let mut seg = segment("a", 20, &[]);
        seg.features.iter_mut().for_each(|f| f.comfort = 1.0);
        assert_eq!(score_stress(&seg, &w).stress, -w.rating);
    }

    fn scores(v: &[f64]) -> Vec<StressScore> {
        v.iter()
            .enumerate()
            .map(|(i, &s)| StressScore {
                segment: format!("s{i}"),
                stress: s,
                event_term: s,
                physiology_term: 0.0,
                rating_term: 0.0,
                gaze_term: 0.0,
            })
            .collect()
    }

    #[test]
    fn labels_follow_stress_and_epsilon() {
        let cfg = PairingConfig {
            strategy: PairingStrategy::AllPairs,
            ..PairingConfig::default()
        };
        let p = make_pairs(&scores(&[0.0, 5.0]), &cfg, 0);
        assert_eq!(p[0].label, PreferenceLabel::APreferred);
        let p = make_pairs(&scores(&[1.0, 1.05]), &cfg, 0);
        assert_eq!(p[0].label, PreferenceLabel::Tie);
        let mut swapped = scores(&[0.0, 5.0]);
        swapped.reverse();
        let q = make_pairs(&swapped, &cfg, 0);
        assert_eq!(q[0].label, PreferenceLabel::BPreferred);
        let p = make_pairs(&scores(&[0.0, 5.0]), &cfg, 0);
        assert_eq!(q[0].confidence, p[0].confidence);
    }

    #[test]
    fn random_k_pairs_are_unique_and_seeded() {
        let s = scores(&(0..50).map(f64::from).collect::<Vec<_>>());
        let cfg = PairingConfig {
            strategy: PairingStrategy::RandomK { k: 3 },
            ..PairingConfig::default()
        };
        let p = make_pairs(&s, &cfg, 5);
        assert_eq!(p, make_pairs(&s, &cfg, 5));
        let mut keys: Vec<_> = p
            .iter()
            .map(|x| if x.a < x.b { (x.a.clone(), x.b.clone()) } else { (x.b.clone(), x.a.clone()) })
            .collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
        assert!(n >= 75);
    }

    #[test]
    fn pair_invariants() {
        assert!(PreferencePair::new("x", "x", PreferenceLabel::Tie, PreferenceSource::HumanExplicit, 1.0).is_err());
        assert!(PreferencePair::new("x", "y", PreferenceLabel::Tie, PreferenceSource::HumanExplicit, 0.0).is_err());
        let p = PreferencePair::new("x", "y", PreferenceLabel::APreferred, PreferenceSource::HumanExplicit, 1.0)
            .unwrap();
        assert_eq!(p.swapped().label, PreferenceLabel::BPreferred);
    }

    #[test]
    fn all_ties_is_no_ordering_signal() {
        let segs = vec![segment("a", 5, &[]), segment("b", 5, &[])];
        let pairs = vec![PreferencePair::new("a", "b", PreferenceLabel::Tie, PreferenceSource::SyntheticInterpreter, 0.5).unwrap()];
        let fmap = FeatureMap::new(SensorConfig::default(), ActionBins::default(), false);
        assert!(matches!(
            fit_reward(&pairs, &segs, fmap, &FitConfig::default()),
            Err(RewardError::NoOrderingSignal)
        ));
    }

    #[test]
    fn fit_learns_positive_weight_on_preferred_feature_and_loss_never_rises() {
        // winners always carry more of the "speed" feature
        let mut segs = Vec::new();
        let mut pairs = Vec::new();
        for i in 0..6 {
            let mut w = segment(&format!("w{i}"), 4, &[]);
            let mut l = segment(&format!("l{i}"), 4, &[]);
            w.observations.iter_mut().for_each(|o| o.speed = 10.0 + i as f64);
            l.observations.iter_mut().for_each(|o| o.speed = 5.0 + i as f64 * 0.5);
            pairs.push(
                PreferencePair::new(&w.id, &l.id, PreferenceLabel::APreferred, PreferenceSource::SyntheticInterpreter, 0.9)
                    .unwrap(),
            );
            segs.extend([w, l]);
        }
        let fmap = FeatureMap::new(SensorConfig::default(), ActionBins::default(), false);
        let cfg = FitConfig {
            normalize: false,
            ..FitConfig::default()
        };
        let (model, report) = fit_reward(&pairs, &segs, fmap, &cfg).unwrap();
        assert!(model.theta[0] > 0.0);
        assert!(report.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.loss_trace[0] > report.final_loss);
        // sigma(d) + sigma(-d) = 1
        let ra = model.segment_return(&segs[0]).unwrap();
        let rb = model.segment_return(&segs[1]).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((s(ra - rb) + s(rb - ra) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_model_and_bin_indicator() {
        let fmap = FeatureMap::new(SensorConfig::default(), ActionBins::default(), false);
        let mut m = RewardModel::zeros(fmap.clone(), RewardArch::Linear);
        let bins = ActionBins::default();
        assert_eq!(m.reward(&obs(), &bins.action(3)).unwrap(), 0.0);
        let b = 4;
        m.theta[fmap.core_len() + b] = 1.0;
        for i in 0..bins.len() {
            let r = m.reward(&obs(), &bins.action(i)).unwrap();
            assert_eq!(r, if i == b { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn mismatched_observation_is_rejected() {
        let fmap = FeatureMap::new(SensorConfig::default(), ActionBins::default(), false);
        let m = RewardModel::zeros(fmap, RewardArch::Linear);
        let mut o = obs();
        o.rays.pop();
        assert!(matches!(m.reward(&o, &Action::IDLE), Err(RewardError::DimensionMismatch(_))));
    }

    #[test]
    fn pairs_and_model_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = make_pairs(
            &scores(&[0.0, 3.0, 1.0]),
            &PairingConfig {
                strategy: PairingStrategy::AllPairs,
                ..PairingConfig::default()
            },
            0,
        );
        let p = dir.path().join("pairs.tsv");
        write_pairs(&p, &pairs).unwrap();
        assert_eq!(read_pairs(&p).unwrap(), pairs);

        let fmap = FeatureMap::new(SensorConfig::default(), ActionBins::default(), false);
        let mut m = RewardModel::zeros(fmap, RewardArch::Mlp { hidden: 4 });
        m.theta.iter_mut().enumerate().for_each(|(i, t)| *t = (i as f64).sin());
        let mp = dir.path().join("model.json");
        m.save(&mp).unwrap();
        let back = RewardModel::load(&mp).unwrap();
        assert_eq!(back.theta, m.theta);
        assert_eq!(back.feature_hash, m.feature_hash);
    }

    #[test]
    fn mock_interpretation_reproduces_synthetic_labels() {
        let cfg = PairingConfig {
            strategy: PairingStrategy::AllPairs,
            ..PairingConfig::default()
        };
        let s = scores(&[0.0, 5.0, 5.05, 2.5, 0.3]);
        let pairs = make_pairs(&s, &cfg, 0);
        let adj = interpret_via_llm(&pairs, &s, &cfg, &crate::llm::LlmAdapter::mock());
        assert_eq!(adj.len(), pairs.len());
        assert_eq!(apply_adjustments(&pairs, &adj), pairs);
    }
}
