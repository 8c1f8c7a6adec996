use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RewardError;
use crate::feedback::FEATURE_NAMES;
use crate::sim::{ActionBins, EventKind, Observation, SensorConfig};

/// `phi(x, y)` = standardized core observation features, one-hot action bin,
/// per-kind event counts, and optionally the aligned feedback vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub sensor: SensorConfig,
    pub bins: ActionBins,
    pub include_feedback: bool,
    /// Per-feature offset for the core block.
    pub mean: Vec<f64>,
    /// Per-feature divisor for the core block.
    pub scale: Vec<f64>,
}

impl FeatureMap {
    pub fn new(sensor: SensorConfig, bins: ActionBins, include_feedback: bool) -> Self {
        let n = Observation::core_len(&sensor);
        Self {
            sensor,
            bins,
            include_feedback,
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn core_len(&self) -> usize {
        Observation::core_len(&self.sensor)
    }

    pub fn dim(&self) -> usize {
        self.core_len()
            + self.bins.len()
            + EventKind::ALL.len()
            + if self.include_feedback { FEATURE_NAMES.len() } else { 0 }
    }

    /// Feature names in vector order.
    pub fn layout(&self) -> Vec<String> {
        let mut names = vec![
            "speed".to_string(),
            "long_accel".into(),
            "lat_accel".into(),
            "heading_error".into(),
            "lane_offset".into(),
        ];
        names.extend((0..self.sensor.rays).map(|i| format!("ray_{i}")));
        for k in 0..self.sensor.nearest_k {
            names.extend([format!("near_{k}_dx"), format!("near_{k}_dy"), format!("near_{k}_dv")]);
        }
        names.push("crosswalk".into());
        names.extend((0..self.bins.len()).map(|b| format!("bin_{b}")));
        names.extend(EventKind::ALL.iter().map(|k| format!("event_{}", k.name())));
        if self.include_feedback {
            names.extend(FEATURE_NAMES.iter().map(|n| format!("fb_{n}")));
        }
        names
    }

    /// Standardizes the core block to zero mean and unit variance over `obs`.
    pub fn fit_normalization<'a>(&mut self, obs: impl IntoIterator<Item = &'a Observation>) {
        let n = self.core_len();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for o in obs {
            for (i, v) in o.core_features(&self.sensor).into_iter().enumerate().take(n) {
                sum[i] += v;
                sq[i] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return;
        }
        let c = count as f64;
        for i in 0..n {
            let m = sum[i] / c;
            let var = (sq[i] / c - m * m).max(0.0);
            self.mean[i] = m;
            self.scale[i] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
    }

    pub fn check(&self, x: &Observation) -> Result<(), RewardError> {
        if x.rays.len() != self.sensor.rays || x.nearest.len() != self.sensor.nearest_k {
            return Err(RewardError::DimensionMismatch(format!(
                "observation has {} rays / {} neighbours, feature map expects {} / {}",
                x.rays.len(),
                x.nearest.len(),
                self.sensor.rays,
                self.sensor.nearest_k
            )));
        }
        if self.include_feedback && !(x.feedback.is_empty() || x.feedback.len() == FEATURE_NAMES.len()) {
            return Err(RewardError::DimensionMismatch(format!(
                "feedback vector has {} entries, expected {}",
                x.feedback.len(),
                FEATURE_NAMES.len()
            )));
        }
        Ok(())
    }

    pub fn phi(&self, x: &Observation, bin: usize) -> Result<Vec<f64>, RewardError> {
        self.check(x)?;
        if bin >= self.bins.len() {
            return Err(RewardError::DimensionMismatch(format!(
                "action bin {bin} outside [0, {})",
                self.bins.len()
            )));
        }
        let mut f = Vec::with_capacity(self.dim());
        for (i, v) in x.core_features(&self.sensor).into_iter().enumerate() {
            f.push((v - self.mean[i]) / self.scale[i]);
        }
        let start = f.len();
        f.resize(start + self.bins.len(), 0.0);
        f[start + bin] = 1.0;
        f.extend_from_slice(&x.event_counts);
        if self.include_feedback {
            if x.feedback.is_empty() {
                f.extend(crate::feedback::AlignedFeatures::NEUTRAL.to_vec());
            } else {
                f.extend_from_slice(&x.feedback);
            }
        }
        Ok(f)
    }

    /// Hash of the layout (sensor geometry, bin table, feedback switch).
    pub fn spec_hash(&self) -> String {
        let desc = serde_json::json!({
            "layout": self.layout(),
            "sensor": self.sensor,
            "bins": self.bins,
            "include_feedback": self.include_feedback,
        });
        hex::encode(&Sha256::digest(desc.to_string().as_bytes())[..])
    }
}
