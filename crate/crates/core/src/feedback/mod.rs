//! Multimodal feedback channels: live ingestion, synthetic physiology and
//! alignment onto simulation ticks.

mod align;
mod ingest;
mod io;
mod synth;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{align, align_ticks, AlignedFeatures, FEATURE_NAMES, HR_BASELINE_WINDOW, EDA_MIN_WINDOW};
pub use ingest::{FrameRejection, Ingestor, QualityWarning};
pub use io::{read_channels, write_channels, CHANNEL_FORMAT_VERSION};
pub use synth::{
    generate_physiology, synthesize_episode, vehicle_channels, EventGains, PhysioParams, Stimulus,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Steering,
    Throttle,
    Brake,
    Speed,
    Acceleration,
    Gyroscope,
    Reverse,
    Bvp,
    HeartRate,
    Ibi,
    Eda,
    WristAccel,
    Temperature,
    GazeX,
    GazeY,
    ComfortRating,
}

impl Modality {
    pub const ALL: [Modality; 16] = [
        Modality::Steering,
        Modality::Throttle,
        Modality::Brake,
        Modality::Speed,
        Modality::Acceleration,
        Modality::Gyroscope,
        Modality::Reverse,
        Modality::Bvp,
        Modality::HeartRate,
        Modality::Ibi,
        Modality::Eda,
        Modality::WristAccel,
        Modality::Temperature,
        Modality::GazeX,
        Modality::GazeY,
        Modality::ComfortRating,
    ];

    pub const VEHICLE: [Modality; 7] = [
        Modality::Steering,
        Modality::Throttle,
        Modality::Brake,
        Modality::Speed,
        Modality::Acceleration,
        Modality::Gyroscope,
        Modality::Reverse,
    ];

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Nominal sampling rate in Hz; `None` for event-based channels.
    pub fn rate(self) -> Option<f64> {
        self.spec().rate_hz
    }

    pub fn spec(self) -> ChannelSpec {
        let (name, rate_hz, unit) = match self {
            Modality::Steering => ("steering", Some(60.0), "unit"),
            Modality::Throttle => ("throttle", Some(60.0), "unit"),
            Modality::Brake => ("brake", Some(60.0), "unit"),
            Modality::Speed => ("speed", Some(60.0), "m/s"),
            Modality::Acceleration => ("acceleration", Some(60.0), "m/s^2"),
            Modality::Gyroscope => ("gyroscope", Some(60.0), "rad/s"),
            Modality::Reverse => ("reverse", Some(60.0), "flag"),
            Modality::Bvp => ("bvp", Some(64.0), "a.u."),
            Modality::HeartRate => ("heart-rate", Some(1.0), "bpm"),
            Modality::Ibi => ("ibi", None, "s"),
            Modality::Eda => ("eda", Some(4.0), "uS"),
            Modality::WristAccel => ("wrist-accel", Some(32.0), "g"),
            Modality::Temperature => ("temperature", Some(4.0), "degC"),
            Modality::GazeX => ("gaze-x", Some(125.0), "screen"),
            Modality::GazeY => ("gaze-y", Some(125.0), "screen"),
            Modality::ComfortRating => ("comfort-rating", None, "rating"),
        };
        ChannelSpec {
            modality: self,
            name,
            rate_hz,
            unit,
        }
    }

    /// Value-domain check beyond finiteness.
    pub fn check_value(self, v: f64) -> Result<(), String> {
        if !v.is_finite() {
            return Err("value is not finite".into());
        }
        match self {
            Modality::HeartRate if v <= 0.0 => Err(format!("heart rate {v} must be > 0")),
            Modality::Eda if v < 0.0 => Err(format!("eda {v} must be >= 0")),
            Modality::Ibi if v <= 0.0 => Err(format!("ibi {v} must be > 0")),
            Modality::ComfortRating if !(-1.0..=1.0).contains(&v) => {
                Err(format!("comfort rating {v} outside [-1, 1]"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSpec {
    pub modality: Modality,
    pub name: &'static str,
    pub rate_hz: Option<f64>,
    pub unit: &'static str,
}

/// One timestamped sample as it arrives from a producer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFrame {
    pub channel: String,
    /// Seconds since episode start.
    pub timestamp: f64,
    pub value: f64,
}

impl FeedbackFrame {
    pub fn new(channel: Modality, timestamp: f64, value: f64) -> Self {
        Self {
            channel: channel.name().to_string(),
            timestamp,
            value,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelBuffer {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ChannelBuffer {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, v: f64) {
        self.times.push(t);
        self.values.push(v);
    }

    /// Index range of samples with `t0 <= t < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let a = self.times.partition_point(|&t| t < t0);
        let b = self.times.partition_point(|&t| t < t1);
        a..b.max(a)
    }

    /// Latest sample strictly before `t`.
    pub fn last_before(&self, t: f64) -> Option<f64> {
        let i = self.times.partition_point(|&x| x < t);
        (i > 0).then(|| self.values[i - 1])
    }
}

/// Recorded or synthesized streams keyed by modality.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeedbackChannels {
    pub channels: BTreeMap<Modality, ChannelBuffer>,
}

impl FeedbackChannels {
    pub fn get(&self, m: Modality) -> Option<&ChannelBuffer> {
        self.channels.get(&m)
    }

    pub fn insert(&mut self, m: Modality, buf: ChannelBuffer) {
        self.channels.insert(m, buf);
    }

    pub fn merge(&mut self, other: FeedbackChannels) {
        self.channels.extend(other.channels);
    }
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed channel file {path}, line {line}: {msg}")]
    Format { path: String, line: usize, msg: String },
}
