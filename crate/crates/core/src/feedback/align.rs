use serde::{Deserialize, Serialize};

use super::{ChannelBuffer, FeedbackChannels, Modality};

/// Seconds of heart-rate history whose median is the rolling baseline.
pub const HR_BASELINE_WINDOW: f64 = 30.0;
/// Seconds of EDA history whose minimum is the tonic level.
pub const EDA_MIN_WINDOW: f64 = 10.0;
/// Minimum phasic rise for a local EDA maximum to count as a peak, uS.
pub const EDA_PEAK_THRESHOLD: f64 = 0.05;
/// Gaze points inside this screen box count as on-road.
pub const ROAD_BOX: [f64; 4] = [0.25, 0.75, 0.35, 0.85];

pub const FEATURE_NAMES: [&str; 7] = [
    "hr_mean",
    "hr_delta",
    "eda_phasic",
    "eda_peaks",
    "wrist_energy",
    "gaze_on_road",
    "comfort",
];

/// Per-tick physiological summary; `to_vec` follows [`FEATURE_NAMES`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedFeatures {
    pub hr_mean: f64,
    pub hr_delta: f64,
    pub eda_phasic: f64,
    pub eda_peaks: f64,
    pub wrist_energy: f64,
    pub gaze_on_road: f64,
    pub comfort: f64,
}

impl AlignedFeatures {
    pub const NEUTRAL: AlignedFeatures = AlignedFeatures {
        hr_mean: 70.0,
        hr_delta: 0.0,
        eda_phasic: 0.0,
        eda_peaks: 0.0,
        wrist_energy: 0.0,
        gaze_on_road: 1.0,
        comfort: 0.0,
    };

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.hr_mean,
            self.hr_delta,
            self.eda_phasic,
            self.eda_peaks,
            self.wrist_energy,
            self.gaze_on_road,
            self.comfort,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

impl Default for AlignedFeatures {
    fn default() -> Self {
        Self::NEUTRAL
    }
}

/// Window mean if the window has samples, else the last earlier sample.
fn mean_or_hold(buf: &ChannelBuffer, t0: f64, t1: f64) -> Option<f64> {
    let r = buf.window(t0, t1);
    if r.is_empty() {
        buf.last_before(t0)
    } else {
        Some(buf.values[r.clone()].iter().sum::<f64>() / r.len() as f64)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times at which EDA peaks become confirmed (the sample after a local maximum).
fn eda_peak_times(eda: &ChannelBuffer) -> Vec<f64> {
    let mut out = Vec::new();
    let (t, v) = (&eda.times, &eda.values);
    for i in 1..v.len().saturating_sub(1) {
        if v[i] > v[i - 1] && v[i] >= v[i + 1] {
            let r = eda.window(t[i] - EDA_MIN_WINDOW, t[i]);
            let floor = v[r].iter().copied().fold(v[i], f64::min);
            if v[i] - floor >= EDA_PEAK_THRESHOLD {
                out.push(t[i + 1]);
            }
        }
    }
    out
}

/// One feature vector per tick of width `1 / tick_rate` over `duration` seconds.
pub fn align(channels: &FeedbackChannels, tick_rate: f64, duration: f64) -> Vec<AlignedFeatures> {
    if !(tick_rate > 0.0 && duration > 0.0) {
        return Vec::new();
    }
    let n = (duration * tick_rate + 1e-9).floor() as usize;
    align_ticks(channels, 1.0 / tick_rate, n)
}

/// As [`align`], for `n` ticks of `dt` seconds.
pub fn align_ticks(channels: &FeedbackChannels, dt: f64, n: usize) -> Vec<AlignedFeatures> {
    let empty = ChannelBuffer::default();
    let get = |m| channels.get(m).unwrap_or(&empty);
    let hr = get(Modality::HeartRate);
    let eda = get(Modality::Eda);
    let wrist = get(Modality::WristAccel);
    let gx = get(Modality::GazeX);
    let gy = get(Modality::GazeY);
    let comfort = get(Modality::ComfortRating);
    let peaks = eda_peak_times(eda);

    (0..n)
        .map(|k| {
            let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
            let mut f = AlignedFeatures::NEUTRAL;

            if let Some(h) = mean_or_hold(hr, t0, t1) {
                f.hr_mean = h;
                let r = hr.window(t0 - HR_BASELINE_WINDOW, t0);
                if !r.is_empty() {
                    f.hr_delta = h - median(hr.values[r].to_vec());
                }
            }

            if let Some(e) = mean_or_hold(eda, t0, t1) {
                let r = eda.window(t1 - EDA_MIN_WINDOW, t1);
                let floor = eda.values[r].iter().copied().fold(e, f64::min);
                f.eda_phasic = e - floor;
            }
            let a = peaks.partition_point(|&p| p < t0);
            let b = peaks.partition_point(|&p| p < t1);
            f.eda_peaks = (b - a) as f64;

            let r = wrist.window(t0, t1);
            if !r.is_empty() {
                f.wrist_energy = wrist.values[r.clone()].iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
            } else if let Some(w) = wrist.last_before(t0) {
                f.wrist_energy = w * w;
            }

            let on_road = |x: f64, y: f64| {
                (ROAD_BOX[0]..=ROAD_BOX[1]).contains(&x) && (ROAD_BOX[2]..=ROAD_BOX[3]).contains(&y)
            };
            let rx = gx.window(t0, t1);
            let pairs: Vec<(f64, f64)> = rx
                .clone()
                .filter_map(|i| gy.values.get(i).map(|&y| (gx.values[i], y)))
                .collect();
            if !pairs.is_empty() {
                f.gaze_on_road =
                    pairs.iter().filter(|(x, y)| on_road(*x, *y)).count() as f64 / pairs.len() as f64;
            } else if let (Some(x), Some(y)) = (gx.last_before(t0), gy.last_before(t0)) {
                f.gaze_on_road = if on_road(x, y) { 1.0 } else { 0.0 };
            }

            if let Some(c) = comfort.last_before(t1) {
                f.comfort = c.clamp(-1.0, 1.0);
            }
            f
        })
        .collect()
}
