use serde::{Deserialize, Serialize};

use super::EpisodeSegment;
use crate::sim::EventKind;

/// Constant stress penalty per event of each kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventPenalties {
    pub collision: f64,
    pub failure_to_yield: f64,
    pub hard_brake: f64,
    pub rapid_lane_change: f64,
    pub abrupt_accel: f64,
    pub near_miss: f64,
}

impl Default for EventPenalties {
    fn default() -> Self {
        Self {
            collision: 100.0,
            failure_to_yield: 10.0,
            hard_brake: 3.0,
            rapid_lane_change: 2.0,
            abrupt_accel: 2.0,
            near_miss: 5.0,
        }
    }
}

impl EventPenalties {
    pub fn penalty(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::Collision => self.collision,
            EventKind::FailureToYield => self.failure_to_yield,
            EventKind::HardBrake => self.hard_brake,
            EventKind::RapidLaneChange => self.rapid_lane_change,
            EventKind::AbruptAccel => self.abrupt_accel,
            EventKind::NearMiss => self.near_miss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StressWeights {
    pub events: f64,
    pub physiology: f64,
    pub rating: f64,
    /// Weight of the off-road gaze fraction; zero by default.
    pub gaze: f64,
    pub penalties: EventPenalties,
}

impl Default for StressWeights {
    fn default() -> Self {
        Self {
            events: 1.0,
            physiology: 1.0,
            rating: 2.0,
            gaze: 0.0,
            penalties: EventPenalties::default(),
        }
    }
}

impl StressWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.events, self.physiology, self.rating, self.gaze];
        if all.iter().any(|w| !w.is_finite()) {
            return Err("stress weights must be finite".into());
        }
        if self.events < 0.0 || self.physiology < 0.0 || self.gaze < 0.0 {
            return Err("event, physiology and gaze weights must be >= 0".into());
        }
        if EventKind::ALL
            .iter()
            .any(|k| !(self.penalties.penalty(*k) >= 0.0 && self.penalties.penalty(*k).is_finite()))
        {
            return Err("event penalties must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressScore {
    pub segment: String,
    pub stress: f64,
    /// Sum of event penalties.
    pub event_term: f64,
    /// Mean positive heart-rate delta plus EDA peak count.
    pub physiology_term: f64,
    /// Negated mean comfort rating.
    pub rating_term: f64,
    /// Mean off-road gaze fraction.
    pub gaze_term: f64,
}

pub fn score_stress(seg: &EpisodeSegment, w: &StressWeights) -> StressScore {
    let event_term: f64 = seg.events.iter().map(|e| w.penalties.penalty(e.kind)).sum();
    let n = seg.features.len().max(1) as f64;
    let hr_pos = seg.features.iter().map(|f| f.hr_delta.max(0.0)).sum::<f64>() / n;
    let peaks: f64 = seg.features.iter().map(|f| f.eda_peaks).sum();
    let physiology_term = hr_pos + peaks;
    let rating_term = -seg.features.iter().map(|f| f.comfort).sum::<f64>() / n;
    let gaze_term = seg.features.iter().map(|f| 1.0 - f.gaze_on_road).sum::<f64>() / n;
    StressScore {
        segment: seg.id.clone(),
        stress: w.events * event_term
            + w.physiology * physiology_term
            + w.rating * rating_term
            + w.gaze * gaze_term,
        event_term,
        physiology_term,
        rating_term,
        gaze_term,
    }
}
