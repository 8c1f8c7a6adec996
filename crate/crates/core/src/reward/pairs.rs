use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RewardError, StressScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreferenceLabel {
    APreferred,
    BPreferred,
    Tie,
}

impl PreferenceLabel {
    pub fn flipped(self) -> Self {
        match self {
            Self::APreferred => Self::BPreferred,
            Self::BPreferred => Self::APreferred,
            Self::Tie => Self::Tie,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::APreferred => "a-preferred",
            Self::BPreferred => "b-preferred",
            Self::Tie => "tie",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::APreferred, Self::BPreferred, Self::Tie]
            .into_iter()
            .find(|l| l.as_str() == s)
    }

    /// Bradley–Terry target weight on "A beats B".
    pub fn target(self) -> f64 {
        match self {
            Self::APreferred => 1.0,
            Self::BPreferred => 0.0,
            Self::Tie => 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreferenceSource {
    SyntheticInterpreter,
    HumanExplicit,
    LlmInterpreter,
}

impl PreferenceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SyntheticInterpreter => "synthetic-interpreter",
            Self::HumanExplicit => "human-explicit",
            Self::LlmInterpreter => "llm-interpreter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::SyntheticInterpreter, Self::HumanExplicit, Self::LlmInterpreter]
            .into_iter()
            .find(|l| l.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub a: String,
    pub b: String,
    pub label: PreferenceLabel,
    pub source: PreferenceSource,
    pub confidence: f64,
}

impl PreferencePair {
    pub fn new(
        a: impl Into<String>,
        b: impl Into<String>,
        label: PreferenceLabel,
        source: PreferenceSource,
        confidence: f64,
    ) -> Result<Self, RewardError> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(RewardError::InvalidPair(format!("segment {a} compared with itself")));
        }
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(RewardError::InvalidPair(format!("confidence {confidence} outside (0, 1]")));
        }
        Ok(Self {
            a,
            b,
            label,
            source,
            confidence,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
            label: self.label.flipped(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairingStrategy {
    AllPairs,
    /// `k` random partners per segment, deduplicated.
    RandomK { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingConfig {
    pub tie_epsilon: f64,
    pub confidence_scale: f64,
    pub strategy: PairingStrategy,
    /// All-pairs is used at or below this many segments.
    pub all_pairs_max: usize,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            tie_epsilon: 0.1,
            confidence_scale: 1.0,
            strategy: PairingStrategy::RandomK { k: 4 },
            all_pairs_max: 30,
        }
    }
}

/// Lower stress is preferred; `|dStress| <= eps` is a tie.
pub fn label_pair(stress_a: f64, stress_b: f64, eps: f64, scale: f64) -> (PreferenceLabel, f64) {
    let d = stress_a - stress_b;
    let label = if d.abs() <= eps {
        PreferenceLabel::Tie
    } else if d < 0.0 {
        PreferenceLabel::APreferred
    } else {
        PreferenceLabel::BPreferred
    };
    (label, 1.0 / (1.0 + (-d.abs() / scale).exp()))
}

fn index_pairs(n: usize, cfg: &PairingConfig, seed: u64) -> Vec<(usize, usize)> {
    let all = || {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect::<Vec<_>>()
    };
    match cfg.strategy {
        PairingStrategy::AllPairs => all(),
        _ if n <= cfg.all_pairs_max => all(),
        PairingStrategy::RandomK { k } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for i in 0..n {
                let k = k.min(n - 1);
                for j in sample(&mut rng, n - 1, k) {
                    let j = if j >= i { j + 1 } else { j };
                    if seen.insert((i.min(j), i.max(j))) {
                        out.push((i, j));
                    }
                }
            }
            out
        }
    }
}

/// Synthetic-interpreter preferences over scored segments.
pub fn make_pairs(scores: &[StressScore], cfg: &PairingConfig, seed: u64) -> Vec<PreferencePair> {
    index_pairs(scores.len(), cfg, seed)
        .into_iter()
        .filter(|&(i, j)| scores[i].segment != scores[j].segment)
        .map(|(i, j)| {
            let (label, confidence) = label_pair(
                scores[i].stress,
                scores[j].stress,
                cfg.tie_epsilon,
                cfg.confidence_scale,
            );
            PreferencePair {
                a: scores[i].segment.clone(),
                b: scores[j].segment.clone(),
                label,
                source: PreferenceSource::SyntheticInterpreter,
                confidence,
            }
        })
        .collect()
}

pub const PAIRS_FORMAT_VERSION: u32 = 1;

pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<(), RewardError> {
    let mut text = format!(
        "# format_version={PAIRS_FORMAT_VERSION}\n# segment_a\tsegment_b\tlabel\tconfidence\tsource\n"
    );
    for p in pairs {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            p.a,
            p.b,
            p.label.as_str(),
            p.confidence,
            p.source.as_str()
        ));
    }
    std::fs::write(path, text).map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>, RewardError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| RewardError::Io(format!("{}:{}: {msg}", path.display(), i + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 tab-separated columns"));
        }
        let label = PreferenceLabel::parse(cols[2]).ok_or_else(|| bad("bad label"))?;
        let confidence: f64 = cols[3].parse().map_err(|_| bad("bad confidence"))?;
        let source = PreferenceSource::parse(cols[4]).ok_or_else(|| bad("bad source"))?;
        out.push(PreferencePair::new(cols[0], cols[1], label, source, confidence)?);
    }
    Ok(out)
}
