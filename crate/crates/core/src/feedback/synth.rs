//! Parametric physiology driven by driving events, plus vehicle channels
//! resampled from an episode log.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ChannelBuffer, FeedbackChannels, FeedbackError, Modality};
use crate::sim::{Action, AgentId, DrivingEvent, EpisodeLog, EventKind};

/// Heart-rate rise per unit of event scale, bpm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventGains {
    pub collision: f64,
    pub near_miss: f64,
    pub hard_brake: f64,
    pub abrupt_accel: f64,
    pub rapid_lane_change: f64,
    pub failure_to_yield: f64,
}

impl Default for EventGains {
    fn default() -> Self {
        Self {
            collision: 2.0,
            near_miss: 4.0,
            hard_brake: 1.5,
            abrupt_accel: 1.0,
            rapid_lane_change: 2.0,
            failure_to_yield: 1.0,
        }
    }
}

impl EventGains {
    pub fn gain(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::Collision => self.collision,
            EventKind::NearMiss => self.near_miss,
            EventKind::HardBrake => self.hard_brake,
            EventKind::AbruptAccel => self.abrupt_accel,
            EventKind::RapidLaneChange => self.rapid_lane_change,
            EventKind::FailureToYield => self.failure_to_yield,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysioParams {
    pub hr_baseline: f64,
    pub hr_latency: f64,
    pub hr_decay: f64,
    pub gains: EventGains,
    pub eda_tonic: f64,
    pub eda_latency: f64,
    pub eda_rise: f64,
    pub eda_decay: f64,
    /// Phasic EDA amplitude per bpm of heart-rate response, uS.
    pub eda_per_bpm: f64,
    /// Wrist acceleration per m/s^2 of braking, g.
    pub wrist_gain: f64,
    pub wrist_window: f64,
    pub temperature: f64,
    pub gaze_center: (f64, f64),
    pub gaze_off_road_x: f64,
    pub gaze_window: f64,
    pub noise_sd_hr: f64,
    pub noise_sd_eda: f64,
    pub noise_sd_bvp: f64,
    pub noise_sd_wrist: f64,
    pub noise_sd_temperature: f64,
    pub noise_sd_gaze: f64,
}

impl Default for PhysioParams {
    fn default() -> Self {
        Self {
            hr_baseline: 70.0,
            hr_latency: 1.0,
            hr_decay: 8.0,
            gains: EventGains::default(),
            eda_tonic: 0.5,
            eda_latency: 2.0,
            eda_rise: 1.0,
            eda_decay: 4.0,
            eda_per_bpm: 0.05,
            wrist_gain: 0.1,
            wrist_window: 1.5,
            temperature: 33.5,
            gaze_center: (0.5, 0.55),
            gaze_off_road_x: 0.9,
            gaze_window: 2.0,
            noise_sd_hr: 1.0,
            noise_sd_eda: 0.02,
            noise_sd_bvp: 0.05,
            noise_sd_wrist: 0.05,
            noise_sd_temperature: 0.05,
            noise_sd_gaze: 0.02,
        }
    }
}

/// A driving event placed on the feedback time axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub time: f64,
    pub kind: EventKind,
    pub magnitude: f64,
}

impl Stimulus {
    pub fn from_event(e: &DrivingEvent, dt: f64) -> Self {
        Self {
            time: e.tick as f64 * dt,
            kind: e.kind,
            magnitude: e.magnitude,
        }
    }

    /// Dimensionless intensity multiplying the per-kind gain.
    pub fn scale(&self) -> f64 {
        match self.kind {
            EventKind::NearMiss => 1.0 / self.magnitude.max(0.1),
            EventKind::Collision => 1.0 + self.magnitude,
            _ => self.magnitude,
        }
    }
}

fn sample_count(duration: f64, rate: f64) -> usize {
    (duration * rate + 1e-9).floor() as usize
}

fn sample_times(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    (0..sample_count(duration, rate)).map(move |k| k as f64 / rate)
}

impl PhysioParams {
    /// Noise-free heart rate at time `t`.
    pub fn heart_rate(&self, stimuli: &[Stimulus], t: f64) -> f64 {
        self.hr_baseline
            + stimuli
                .iter()
                .map(|s| {
                    let tau = t - s.time;
                    if tau < self.hr_latency {
                        0.0
                    } else {
                        self.gains.gain(s.kind)
                            * s.scale()
                            * (-(tau - self.hr_latency) / self.hr_decay).exp()
                    }
                })
                .sum::<f64>()
    }

    /// Noise-free skin conductance at time `t`.
    pub fn eda(&self, stimuli: &[Stimulus], t: f64) -> f64 {
        self.eda_tonic
            + stimuli
                .iter()
                .map(|s| {
                    let tau = t - s.time - self.eda_latency;
                    let amp = self.eda_per_bpm * self.gains.gain(s.kind) * s.scale();
                    if tau < 0.0 {
                        0.0
                    } else if tau < self.eda_rise {
                        amp * tau / self.eda_rise
                    } else {
                        amp * (-(tau - self.eda_rise) / self.eda_decay).exp()
                    }
                })
                .sum::<f64>()
    }

    fn wrist(&self, stimuli: &[Stimulus], t: f64) -> f64 {
        stimuli
            .iter()
            .filter(|s| s.kind == EventKind::HardBrake && t >= s.time && t < s.time + self.wrist_window)
            .map(|s| self.wrist_gain * s.magnitude)
            .sum()
    }

    fn gaze_x(&self, stimuli: &[Stimulus], t: f64) -> f64 {
        let off = stimuli.iter().any(|s| {
            s.kind == EventKind::RapidLaneChange && t >= s.time && t < s.time + self.gaze_window
        });
        if off {
            self.gaze_off_road_x
        } else {
            self.gaze_center.0
        }
    }
}

/// Per-channel Gaussian noise; no random draws at all when `level` is 0.
struct Noise {
    rng: Option<ChaCha8Rng>,
    normal: Normal<f64>,
}

impl Noise {
    fn new(seed: u64, channel: Modality, sd: f64, level: f64) -> Self {
        let active = level > 0.0 && sd > 0.0;
        let rng = active.then(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(channel as u64);
            r
        });
        let normal = Normal::new(0.0, if active { sd * level } else { 1.0 }).expect("finite sd");
        Self { rng, normal }
    }

    fn add(&mut self, v: f64) -> f64 {
        match &mut self.rng {
            Some(r) => v + self.normal.sample(r),
            None => v,
        }
    }
}

/// Synthesizes the physiological channels (bvp, heart-rate, ibi, eda,
/// wrist-accel, temperature, gaze) for `duration` seconds.
pub fn generate_physiology(
    stimuli: &[Stimulus],
    duration: f64,
    params: &PhysioParams,
    seed: u64,
    noise: f64,
) -> Result<FeedbackChannels, FeedbackError> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(FeedbackError::InvalidInput(format!(
            "duration {duration} must be finite and >= 0"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(FeedbackError::InvalidInput(format!("noise level {noise} must be >= 0")));
    }
    if let Some(s) = stimuli
        .iter()
        .find(|s| !(s.time >= 0.0 && s.time <= duration + 1e-9 && s.magnitude.is_finite()))
    {
        return Err(FeedbackError::InvalidInput(format!(
            "event {:?} at t={} outside [0, {duration}] or non-finite",
            s.kind, s.time
        )));
    }
    let p = params;
    let mut out = FeedbackChannels::default();
    let rate = |m: Modality| m.rate().expect("fixed-rate channel");

    let mut noise_hr = Noise::new(seed, Modality::HeartRate, p.noise_sd_hr, noise);
    let mut hr = ChannelBuffer::default();
    for t in sample_times(duration, rate(Modality::HeartRate)) {
        hr.push(t, noise_hr.add(p.heart_rate(stimuli, t)).max(1.0));
    }
    out.insert(Modality::HeartRate, hr);

    // pulse wave whose phase advances with the instantaneous heart rate
    let mut noise_bvp = Noise::new(seed, Modality::Bvp, p.noise_sd_bvp, noise);
    let mut bvp = ChannelBuffer::default();
    let r = rate(Modality::Bvp);
    let mut phase = 0.0_f64;
    for t in sample_times(duration, r) {
        bvp.push(t, noise_bvp.add(phase.sin()));
        phase += std::f64::consts::TAU * p.heart_rate(stimuli, t) / 60.0 / r;
    }
    out.insert(Modality::Bvp, bvp);

    let mut ibi = ChannelBuffer::default();
    let mut beat = 60.0 / p.heart_rate(stimuli, 0.0);
    while beat < duration {
        let interval = 60.0 / p.heart_rate(stimuli, beat);
        ibi.push(beat, interval);
        beat += interval;
    }
    out.insert(Modality::Ibi, ibi);

    let mut noise_eda = Noise::new(seed, Modality::Eda, p.noise_sd_eda, noise);
    let mut eda = ChannelBuffer::default();
    for t in sample_times(duration, rate(Modality::Eda)) {
        eda.push(t, noise_eda.add(p.eda(stimuli, t)).max(0.0));
    }
    out.insert(Modality::Eda, eda);

    let mut noise_w = Noise::new(seed, Modality::WristAccel, p.noise_sd_wrist, noise);
    let mut wrist = ChannelBuffer::default();
    for t in sample_times(duration, rate(Modality::WristAccel)) {
        wrist.push(t, noise_w.add(p.wrist(stimuli, t)));
    }
    out.insert(Modality::WristAccel, wrist);

    let mut noise_t = Noise::new(seed, Modality::Temperature, p.noise_sd_temperature, noise);
    let mut temp = ChannelBuffer::default();
    for t in sample_times(duration, rate(Modality::Temperature)) {
        temp.push(t, noise_t.add(p.temperature));
    }
    out.insert(Modality::Temperature, temp);

    let mut noise_gx = Noise::new(seed, Modality::GazeX, p.noise_sd_gaze, noise);
    let mut noise_gy = Noise::new(seed, Modality::GazeY, p.noise_sd_gaze, noise);
    let (mut gx, mut gy) = (ChannelBuffer::default(), ChannelBuffer::default());
    for t in sample_times(duration, rate(Modality::GazeX)) {
        gx.push(t, noise_gx.add(p.gaze_x(stimuli, t)));
        gy.push(t, noise_gy.add(p.gaze_center.1));
    }
    out.insert(Modality::GazeX, gx);
    out.insert(Modality::GazeY, gy);
    Ok(out)
}

/// Vehicle channels of `agent` at their nominal rate, zero-order held from ticks.
pub fn vehicle_channels(log: &EpisodeLog, agent: AgentId) -> FeedbackChannels {
    let dt = log.header.dt;
    let mut out = FeedbackChannels::default();
    for m in Modality::VEHICLE {
        out.insert(m, ChannelBuffer::default());
    }
    if log.ticks.is_empty() {
        return out;
    }
    let rate = Modality::Steering.rate().expect("vehicle channels are fixed-rate");
    for t in sample_times(log.duration(), rate) {
        let k = ((t / dt + 1e-9).floor() as usize).min(log.ticks.len() - 1);
        let rec = &log.ticks[k];
        let action = rec.actions.get(&agent).copied().unwrap_or(Action::IDLE);
        let state = rec.agents.iter().find(|a| a.id == agent);
        let (speed, accel, yaw) = state.map_or((0.0, 0.0, 0.0), |s| (s.speed, s.accel, s.yaw_rate));
        let values = [
            action.steering,
            action.throttle,
            action.brake,
            speed,
            accel,
            yaw,
            if action.reverse { 1.0 } else { 0.0 },
        ];
        for (m, v) in Modality::VEHICLE.into_iter().zip(values) {
            out.channels.get_mut(&m).expect("inserted above").push(t, v);
        }
    }
    out
}

/// Synthetic feedback for one agent's episode: physiology from its events plus
/// its vehicle channels.
pub fn synthesize_episode(
    log: &EpisodeLog,
    agent: AgentId,
    params: &PhysioParams,
    seed: u64,
    noise: f64,
) -> Result<FeedbackChannels, FeedbackError> {
    let stimuli: Vec<Stimulus> = log
        .events_of(agent)
        .iter()
        .map(|e| Stimulus::from_event(e, log.header.dt))
        .collect();
    let mut ch = generate_physiology(&stimuli, log.duration(), params, seed, noise)?;
    ch.merge(vehicle_channels(log, agent));
    Ok(ch)
}
