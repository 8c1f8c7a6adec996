use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{PairingConfig, PreferencePair, PreferenceSource, StressScore};
use crate::llm::{LlmAdapter, PreferenceAdjustment, PromptEnvelope, RoleTag, MAX_PAYLOAD_BYTES};

fn header(cfg: &PairingConfig) -> String {
    format!(
        "tie_epsilon={} confidence_scale={}\n",
        cfg.tie_epsilon, cfg.confidence_scale
    )
}

fn pair_line(i: usize, p: &PreferencePair, scores: &BTreeMap<&str, &StressScore>) -> Option<String> {
    let (a, b) = (scores.get(p.a.as_str())?, scores.get(p.b.as_str())?);
    Some(format!(
        "pair={i} a={} b={} stress_a={} stress_b={} events_a={} events_b={} physio_a={} physio_b={} rating_a={} rating_b={}\n",
        p.a, p.b, a.stress, b.stress, a.event_term, b.event_term, a.physiology_term,
        b.physiology_term, -a.rating_term, -b.rating_term
    ))
}

/// Compact per-pair summaries, split so each payload stays under the size cap.
pub fn summarize_pairs(
    pairs: &[PreferencePair],
    scores: &[StressScore],
    cfg: &PairingConfig,
) -> Vec<String> {
    let by_id: BTreeMap<&str, &StressScore> = scores.iter().map(|s| (s.segment.as_str(), s)).collect();
    let mut chunks = Vec::new();
    let mut cur = header(cfg);
    let base = cur.len();
    for (i, p) in pairs.iter().enumerate() {
        let Some(line) = pair_line(i, p, &by_id) else { continue };
        if cur.len() + line.len() > MAX_PAYLOAD_BYTES && cur.len() > base {
            chunks.push(std::mem::replace(&mut cur, header(cfg)));
        }
        if line.len() + base <= MAX_PAYLOAD_BYTES {
            let _ = write!(cur, "{line}");
        }
    }
    if cur.len() > base {
        chunks.push(cur);
    }
    chunks
}

/// Asks the adapter to relabel existing pairs. Any failure yields no
/// adjustments, leaving the synthetic labels in place.
pub fn interpret_via_llm(
    pairs: &[PreferencePair],
    scores: &[StressScore],
    cfg: &PairingConfig,
    adapter: &LlmAdapter,
) -> Vec<PreferenceAdjustment> {
    let mut out = Vec::new();
    for payload in summarize_pairs(pairs, scores, cfg) {
        let env = match PromptEnvelope::new(RoleTag::InterpretFeedback, payload) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("feedback interpretation skipped: {e}");
                return Vec::new();
            }
        };
        match adapter.interpret_feedback(&env) {
            Ok(adj) => out.extend(adj.into_iter().filter(|a| a.pair < pairs.len())),
            Err(e) => {
                log::warn!("feedback interpretation failed, keeping synthetic labels: {e}");
                return Vec::new();
            }
        }
    }
    out
}

/// Applies adjustments; pairs whose label or confidence changed are re-sourced
/// to the LLM interpreter.
pub fn apply_adjustments(
    pairs: &[PreferencePair],
    adjustments: &[PreferenceAdjustment],
) -> Vec<PreferencePair> {
    let mut out = pairs.to_vec();
    for adj in adjustments {
        if let Some(p) = out.get_mut(adj.pair) {
            if p.label != adj.label || p.confidence != adj.confidence {
                p.label = adj.label;
                p.confidence = adj.confidence.clamp(f64::MIN_POSITIVE, 1.0);
                p.source = PreferenceSource::LlmInterpreter;
            }
        }
    }
    out
}
