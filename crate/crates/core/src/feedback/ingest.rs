use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChannelBuffer, FeedbackChannels, FeedbackFrame, Modality};

/// Allowed relative deviation of the observed rate from nominal.
pub const RATE_TOLERANCE: f64 = 0.2;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FrameRejection {
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("{channel}: timestamp {timestamp} not after {previous}")]
    OutOfOrder {
        channel: Modality,
        timestamp: f64,
        previous: f64,
    },
    #[error("{channel}: {msg}")]
    InvalidValue { channel: Modality, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityWarning {
    pub channel: Modality,
    pub nominal_hz: f64,
    pub observed_hz: f64,
}

/// Buckets interleaved frames per channel, enforcing per-channel ordering.
#[derive(Clone, Debug, Default)]
pub struct Ingestor {
    buffers: BTreeMap<Modality, ChannelBuffer>,
    rejected: usize,
}

impl Ingestor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(&mut self, frame: &FeedbackFrame) -> Result<Modality, FrameRejection> {
        let result = self.try_ingest(frame);
        if let Err(e) = &result {
            log::warn!("rejected feedback frame: {e}");
            self.rejected += 1;
        }
        result
    }

    fn try_ingest(&mut self, frame: &FeedbackFrame) -> Result<Modality, FrameRejection> {
        let channel = Modality::from_name(&frame.channel)
            .ok_or_else(|| FrameRejection::UnknownChannel(frame.channel.clone()))?;
        if !frame.timestamp.is_finite() {
            return Err(FrameRejection::InvalidValue {
                channel,
                msg: "timestamp is not finite".into(),
            });
        }
        channel
            .check_value(frame.value)
            .map_err(|msg| FrameRejection::InvalidValue { channel, msg })?;
        let buf = self.buffers.entry(channel).or_default();
        if let Some(&previous) = buf.times.last() {
            if frame.timestamp <= previous {
                return Err(FrameRejection::OutOfOrder {
                    channel,
                    timestamp: frame.timestamp,
                    previous,
                });
            }
        }
        buf.push(frame.timestamp, frame.value);
        Ok(channel)
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn buffer(&self, m: Modality) -> Option<&ChannelBuffer> {
        self.buffers.get(&m)
    }

    /// Channels whose observed rate deviates from nominal by more than 20%.
    pub fn warnings(&self) -> Vec<QualityWarning> {
        self.buffers
            .iter()
            .filter_map(|(&channel, buf)| {
                let nominal = channel.rate()?;
                if buf.len() < 2 {
                    return None;
                }
                let span = buf.times[buf.len() - 1] - buf.times[0];
                let observed = (buf.len() - 1) as f64 / span;
                ((observed / nominal - 1.0).abs() > RATE_TOLERANCE).then_some(QualityWarning {
                    channel,
                    nominal_hz: nominal,
                    observed_hz: observed,
                })
            })
            .collect()
    }

    pub fn finish(self) -> (FeedbackChannels, Vec<QualityWarning>) {
        let warnings = self.warnings();
        (
            FeedbackChannels {
                channels: self.buffers,
            },
            warnings,
        )
    }
}
