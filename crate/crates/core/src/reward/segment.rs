use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::feedback::AlignedFeatures;
use crate::sim::{Action, AgentId, DrivingEvent, EpisodeLog, Observation};

use super::RewardError;

/// Contiguous window `[t0, t1)` of one agent's experience in an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSegment {
    pub id: String,
    pub episode_id: String,
    pub t0: u64,
    pub t1: u64,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub features: Vec<AlignedFeatures>,
    /// Events produced by the steps `t0..t1`.
    pub events: Vec<DrivingEvent>,
}

impl EpisodeSegment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn segment_id(episode_id: &str, t0: u64) -> String {
        format!("{episode_id}:{t0}")
    }
}

/// Ego segments of `seg_len` ticks with neutral feedback features.
pub fn slice_segments(log: &EpisodeLog, seg_len: usize) -> Vec<EpisodeSegment> {
    match log.ego() {
        Some(ego) => slice_agent_segments(log, ego, &[], seg_len),
        None => Vec::new(),
    }
}

/// Non-overlapping windows of `seg_len` ticks; a trailing partial window is kept
/// when it has at least half the length or contains an event. `features` is
/// indexed by tick; missing entries are neutral. Observations carry outcome
/// event counts so a step is credited with what it caused.
pub fn slice_agent_segments(
    log: &EpisodeLog,
    agent: AgentId,
    features: &[AlignedFeatures],
    seg_len: usize,
) -> Vec<EpisodeSegment> {
    let seg_len = seg_len.max(1);
    // ticks where the agent acted
    let n = log
        .ticks
        .iter()
        .take_while(|r| r.actions.contains_key(&agent) && r.observations.contains_key(&agent))
        .count();
    let mut out = Vec::new();
    let mut t0 = 0;
    while t0 < n {
        let t1 = (t0 + seg_len).min(n);
        let events: Vec<DrivingEvent> = (t0..t1).flat_map(|k| log.outcome_events(k, agent)).collect();
        if t1 - t0 < seg_len && 2 * (t1 - t0) < seg_len && events.is_empty() {
            break;
        }
        let recs = &log.ticks[t0..t1];
        let start = recs[0].tick;
        out.push(EpisodeSegment {
            id: EpisodeSegment::segment_id(&log.header.episode_id, start),
            episode_id: log.header.episode_id.clone(),
            t0: start,
            t1: start + (t1 - t0) as u64,
            observations: (t0..t1)
                .map(|k| log.outcome_observation(k, agent).expect("agent acted at this tick"))
                .collect(),
            actions: recs.iter().map(|r| r.actions[&agent]).collect(),
            features: (t0..t1)
                .map(|k| features.get(k).copied().unwrap_or(AlignedFeatures::NEUTRAL))
                .collect(),
            events,
        });
        t0 = t1;
    }
    out
}

pub const SEGMENTS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SegmentsHeader {
    format_version: u32,
    count: usize,
}

/// NDJSON: a header line, then one segment per line.
pub fn write_segments(path: &Path, segments: &[EpisodeSegment]) -> Result<(), RewardError> {
    let io = |e: std::io::Error| RewardError::Io(format!("{}: {e}", path.display()));
    let f = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(f);
    let header = SegmentsHeader {
        format_version: SEGMENTS_FORMAT_VERSION,
        count: segments.len(),
    };
    let header = serde_json::to_string(&header).expect("header serializes");
    writeln!(w, "{header}").map_err(io)?;
    for s in segments {
        writeln!(w, "{}", serde_json::to_string(s).expect("segments serialize")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_segments(path: &Path) -> Result<Vec<EpisodeSegment>, RewardError> {
    let f = std::fs::File::open(path).map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = std::io::BufReader::new(f).lines();
    let bad = |i: usize, msg: String| RewardError::Io(format!("{}:{}: {msg}", path.display(), i + 1));
    let first = lines
        .next()
        .ok_or_else(|| bad(0, "empty file".into()))?
        .map_err(|e| bad(0, e.to_string()))?;
    let header: SegmentsHeader = serde_json::from_str(&first).map_err(|e| bad(0, e.to_string()))?;
    if header.format_version != SEGMENTS_FORMAT_VERSION {
        return Err(bad(0, format!("unsupported format version {}", header.format_version)));
    }
    let mut out = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?);
    }
    if out.len() != header.count {
        return Err(bad(0, format!("header promises {} segments, found {}", header.count, out.len())));
    }
    Ok(out)
}
