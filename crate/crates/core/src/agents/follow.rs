//! Car-following with the Intelligent Driver Model and proportional lane keeping.

use serde::{Deserialize, Serialize};

use crate::sim::{Action, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FollowParams {
    /// Desired speed v0, m/s.
    pub desired_speed: f64,
    /// Safe time headway T, s.
    pub time_headway: f64,
    /// Minimum standstill gap s0, m.
    pub min_gap: f64,
    /// IDM maximum acceleration, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration b, m/s^2.
    pub comfort_brake: f64,
    /// Vehicle acceleration at full throttle, used to map accel to pedals.
    pub vehicle_max_accel: f64,
    /// Vehicle deceleration at full brake.
    pub vehicle_max_brake: f64,
    pub steer_offset_gain: f64,
    pub steer_heading_gain: f64,
    /// Agents with |dy| below this count as in-lane leaders.
    pub lane_band: f64,
    /// Subtracted from center distance to get the bumper gap (sum of radii).
    pub leader_gap_offset: f64,
    /// Stop this far before the center of an occupied crosswalk.
    pub crosswalk_stop_margin: f64,
}

impl Default for FollowParams {
    fn default() -> Self {
        Self {
            desired_speed: 12.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 3.0,
            comfort_brake: 2.0,
            vehicle_max_accel: 3.0,
            vehicle_max_brake: 8.0,
            steer_offset_gain: 0.3,
            steer_heading_gain: 1.0,
            lane_band: 1.75,
            leader_gap_offset: 2.0,
            crosswalk_stop_margin: 3.0,
        }
    }
}

impl FollowParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("max_accel", self.max_accel),
            ("comfort_brake", self.comfort_brake),
            ("vehicle_max_accel", self.vehicle_max_accel),
            ("vehicle_max_brake", self.vehicle_max_brake),
            ("lane_band", self.lane_band),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be > 0"));
            }
        }
        let non_negative = [
            ("min_gap", self.min_gap),
            ("steer_offset_gain", self.steer_offset_gain),
            ("steer_heading_gain", self.steer_heading_gain),
            ("leader_gap_offset", self.leader_gap_offset),
            ("crosswalk_stop_margin", self.crosswalk_stop_margin),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// IDM acceleration for speed `v`; `leader` is `(gap s, approach rate v - v_lead)`.
pub fn idm_acceleration(p: &FollowParams, v: f64, leader: Option<(f64, f64)>) -> f64 {
    let free = p.max_accel * (1.0 - (v / p.desired_speed).powi(4));
    match leader {
        None => free,
        Some((gap, approach)) => {
            let s_star = p.min_gap
                + (v * p.time_headway + v * approach / (2.0 * (p.max_accel * p.comfort_brake).sqrt()))
                    .max(0.0);
            free - p.max_accel * (s_star / gap.max(0.1)).powi(2)
        }
    }
}

/// Maps a signed acceleration onto throttle/brake pedals.
pub fn accel_to_pedals(p: &FollowParams, accel: f64) -> (f64, f64) {
    if accel >= 0.0 {
        ((accel / p.vehicle_max_accel).min(1.0), 0.0)
    } else {
        (0.0, (-accel / p.vehicle_max_brake).min(1.0))
    }
}

/// Nearest in-lane agent ahead as `(gap, approach rate)`.
pub fn leader_ahead(obs: &Observation, p: &FollowParams, ray_max: f64) -> Option<(f64, f64)> {
    obs.nearest
        .iter()
        .filter(|n| n[0] > 0.0 && n[0] < ray_max && n[1].abs() < p.lane_band)
        .min_by(|a, b| a[0].total_cmp(&b[0]))
        .map(|n| ((n[0] - p.leader_gap_offset).max(0.1), -n[2]))
}

/// Longitudinal acceleration the follower wants, treating an occupied crosswalk
/// ahead as a stopped leader.
pub fn follow_acceleration(obs: &Observation, p: &FollowParams, ray_max: f64) -> f64 {
    let v = obs.speed;
    let mut accel = idm_acceleration(p, v, leader_ahead(obs, p, ray_max));
    if obs.crosswalk_distance < ray_max {
        let gap = (obs.crosswalk_distance - p.crosswalk_stop_margin).max(0.1);
        accel = accel.min(idm_acceleration(p, v, Some((gap, v))));
    }
    accel
}

/// Proportional steering toward a lateral target offset from the lane centerline.
pub fn lane_keep_steering(obs: &Observation, p: &FollowParams, target_offset: f64) -> f64 {
    let s = -(p.steer_offset_gain * (obs.lane_offset - target_offset)
        + p.steer_heading_gain * obs.heading_error);
    if s.is_finite() {
        s.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// IDM car-following with lane keeping. Pure: same inputs give the same action.
///
/// `ray_max` is the sensor range; nearest-agent slots at or beyond it are empty.
pub fn scripted_follow(obs: &Observation, params: &FollowParams, ray_max: f64) -> Action {
    let accel = follow_acceleration(obs, params, ray_max);
    let (throttle, brake) = accel_to_pedals(params, if accel.is_finite() { accel } else { -1e9 });
    Action::new(lane_keep_steering(obs, params, 0.0), throttle, brake)
}

/// Named parameter presets imitating driving styles.
pub fn persona_preset(name: &str) -> Option<FollowParams> {
    let base = FollowParams::default();
    match name {
        "normal" => Some(base),
        "aggressive" => Some(FollowParams {
            desired_speed: 14.0,
            time_headway: 0.8,
            min_gap: 1.5,
            comfort_brake: 3.0,
            steer_offset_gain: 0.6,
            ..base
        }),
        "cautious" => Some(FollowParams {
            desired_speed: 10.0,
            time_headway: 2.2,
            min_gap: 3.0,
            comfort_brake: 1.5,
            ..base
        }),
        _ => None,
    }
}

pub const PERSONAS: [&str; 3] = ["normal", "aggressive", "cautious"];

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn obs(speed: f64) -> Observation {
        Observation {
            speed,
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

    #[test]
    fn free_road_equilibrium_at_desired_speed() {
        let p = FollowParams::default();
        let a = scripted_follow(&obs(p.desired_speed), &p, 50.0);
        assert!(a.throttle.abs() < 1e-12 && a.brake.abs() < 1e-12);
        let a = scripted_follow(&obs(5.0), &p, 50.0);
        assert!(a.throttle > 0.0);
    }

    #[test]
    fn stopped_leader_close_ahead_forces_braking() {
        let p = FollowParams::default();
        let mut o = obs(10.0);
        // leader stopped with a 5 m bumper gap
        o.nearest[0] = [5.0 + p.leader_gap_offset, 0.0, -10.0];
        // independent IDM evaluation
        let s_star = 2.0 + 10.0 * 1.5 + 10.0 * 10.0 / (2.0 * (3.0f64 * 2.0).sqrt());
        let expected = 3.0 * (1.0 - (10.0f64 / 12.0).powi(4)) - 3.0 * (s_star / 5.0).powi(2);
        assert!((follow_acceleration(&o, &p, 50.0) - expected).abs() < 1e-9);
        let a = scripted_follow(&o, &p, 50.0);
        assert!(a.brake > 0.0);
        assert_eq!(a.throttle, 0.0);
    }

    #[test]
    fn lateral_offset_produces_corrective_steering() {
        let p = FollowParams::default();
        let mut o = obs(10.0);
        o.lane_offset = 0.5;
        assert!(scripted_follow(&o, &p, 50.0).steering < 0.0);
        o.lane_offset = -0.5;
        assert!(scripted_follow(&o, &p, 50.0).steering > 0.0);
    }

    #[test]
    fn adjacent_lane_traffic_is_not_a_leader() {
        let p = FollowParams::default();
        let mut o = obs(10.0);
        o.nearest[0] = [6.0, 3.5, -10.0];
        assert!(leader_ahead(&o, &p, 50.0).is_none());
    }

    #[test]
    fn occupied_crosswalk_acts_as_stopped_leader() {
        let p = FollowParams::default();
        let mut o = obs(8.0);
        o.crosswalk_distance = 12.0;
        assert!(scripted_follow(&o, &p, 50.0).brake > 0.0);
    }

    #[test]
    fn aggressive_persona_throttles_at_least_as_much_as_cautious() {
        let aggressive = persona_preset("aggressive").unwrap();
        let cautious = persona_preset("cautious").unwrap();
        for gap in [8.0, 15.0, 25.0, 40.0] {
            for v in [4.0, 8.0, 12.0] {
                for dv in [-3.0, 0.0, 3.0] {
                    let mut o = obs(v);
                    o.nearest[0] = [gap, 0.0, dv];
                    let a = scripted_follow(&o, &aggressive, 50.0);
                    let c = scripted_follow(&o, &cautious, 50.0);
                    assert!(a.throttle >= c.throttle, "gap {gap} v {v} dv {dv}");
                    assert!(a.brake <= c.brake);
                }
            }
        }
    }
}
