use serde::{Deserialize, Serialize};

use crate::geom::Vec2;

/// A pedestrian walking a fixed path at constant speed once its start tick passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianScript {
    pub path: Vec<Vec2>,
    /// Walking speed, m/s.
    pub speed: f64,
    /// Tick at which the pedestrian starts walking.
    pub start_tick: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PedestrianStep {
    pub position: Vec2,
    pub heading: f64,
    /// Distance covered during the step ending at the queried tick.
    pub displacement: f64,
    pub moving: bool,
}

impl PedestrianScript {
    pub fn validate(&self, max_speed: f64) -> Result<(), String> {
        if self.path.len() < 2 {
            return Err("pedestrian path needs at least 2 points".into());
        }
        if self.path.iter().any(|p| !p.is_finite()) {
            return Err("pedestrian path has non-finite points".into());
        }
        if self.path.windows(2).any(|w| w[0].distance(w[1]) < 1e-9) {
            return Err("pedestrian path has repeated consecutive points".into());
        }
        if !(self.speed > 0.0 && self.speed <= max_speed) {
            return Err(format!("walking speed must be in (0, {max_speed}]"));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.path.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    fn distance_at(&self, tick: u64, dt: f64) -> f64 {
        let walked = tick.saturating_sub(self.start_tick) as f64 * self.speed * dt;
        walked.min(self.length())
    }

    fn point_at(&self, dist: f64) -> (Vec2, f64) {
        let mut remaining = dist;
        let mut last = (self.path[0], 0.0);
        for w in self.path.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let heading = seg.y.atan2(seg.x);
            if remaining <= len {
                return (w[0] + seg * (remaining / len), heading);
            }
            remaining -= len;
            last = (w[1], heading);
        }
        last
    }

    /// Position, heading and whether the pedestrian moved into this tick.
    pub fn position_at(&self, tick: u64, dt: f64) -> (Vec2, f64, bool) {
        let step = pedestrian_script(tick, dt, self);
        (step.position, step.heading, step.moving)
    }
}

/// Pedestrian pose at `tick`: stationary at the path start until `start_tick`,
/// then walking at constant speed, then resting at the final point.
pub fn pedestrian_script(tick: u64, dt: f64, script: &PedestrianScript) -> PedestrianStep {
    let d = script.distance_at(tick, dt);
    let d_prev = if tick == 0 {
        d
    } else {
        script.distance_at(tick - 1, dt)
    };
    let (position, heading) = script.point_at(d);
    PedestrianStep {
        position,
        heading,
        displacement: d - d_prev,
        moving: d > d_prev,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script() -> PedestrianScript {
        PedestrianScript {
            path: vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 10.0)],
            speed: 1.4,
            start_tick: 100,
        }
    }

    #[test]
    fn stationary_before_schedule() {
        let s = pedestrian_script(50, 0.05, &script());
        assert_eq!(s.position, Vec2::new(0.0, 0.0));
        assert!(!s.moving);
        assert_eq!(s.displacement, 0.0);
    }

    #[test]
    fn walks_seven_centimeters_per_tick() {
        let s = pedestrian_script(101, 0.05, &script());
        assert!((s.displacement - 0.07).abs() < 1e-12);
        assert!(s.moving);
        let s = pedestrian_script(150, 0.05, &script());
        assert!((s.position.y - 50.0 * 0.07).abs() < 1e-9);
    }

    #[test]
    fn saturates_at_path_end() {
        let s = pedestrian_script(10_000, 0.05, &script());
        assert_eq!(s.position, Vec2::new(0.0, 10.0));
        assert!(!s.moving);
    }

    #[test]
    fn validation() {
        let mut s = script();
        assert!(s.validate(3.0).is_ok());
        s.speed = 4.0;
        assert!(s.validate(3.0).is_err());
        s.speed = 1.0;
        s.path.truncate(1);
        assert!(s.validate(3.0).is_err());
    }
}
