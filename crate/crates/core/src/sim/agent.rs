use std::fmt;

use serde::{Deserialize, Serialize};

use super::road::LaneId;
use super::SimError;
use crate::geom::{normalize_angle, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Ego,
    ScriptedCar,
    LlmCar,
    HumanCar,
    Pedestrian,
}

impl AgentKind {
    pub fn is_vehicle(self) -> bool {
        self != AgentKind::Pedestrian
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub kind: AgentKind,
    pub pose: Pose,
    /// Speed magnitude, m/s, in [0, v_max(kind)].
    pub speed: f64,
    /// Vehicles only.
    pub wheelbase: Option<f64>,
    pub radius: f64,
    pub lane: Option<LaneId>,
    /// Longitudinal offset along `lane`, meters.
    pub s: f64,
    /// Vehicle is in reverse gear.
    #[serde(default)]
    pub reversing: bool,
    /// Longitudinal acceleration over the last step, m/s^2.
    #[serde(default)]
    pub accel: f64,
    /// Yaw rate over the last step, rad/s.
    #[serde(default)]
    pub yaw_rate: f64,
}

impl AgentState {
    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }

    /// Signed velocity vector (negative along heading when reversing).
    pub fn velocity(&self) -> Vec2 {
        let dir = if self.reversing { -1.0 } else { 1.0 };
        Vec2::from_angle(self.pose.heading) * (self.speed * dir)
    }

    pub fn is_finite(&self) -> bool {
        self.pose.x.is_finite()
            && self.pose.y.is_finite()
            && self.pose.heading.is_finite()
            && self.speed.is_finite()
            && self.s.is_finite()
            && self.accel.is_finite()
            && self.yaw_rate.is_finite()
    }
}

/// A control command: the action symbol of the learning problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    /// [-1, 1], scaled by the maximum front-wheel angle.
    pub steering: f64,
    /// [0, 1]
    pub throttle: f64,
    /// [0, 1]
    pub brake: f64,
    #[serde(default)]
    pub reverse: bool,
}

impl Action {
    pub const IDLE: Action = Action {
        steering: 0.0,
        throttle: 0.0,
        brake: 0.0,
        reverse: false,
    };

    pub const FULL_BRAKE: Action = Action {
        steering: 0.0,
        throttle: 0.0,
        brake: 1.0,
        reverse: false,
    };

    pub fn new(steering: f64, throttle: f64, brake: f64) -> Self {
        Self {
            steering,
            throttle,
            brake,
            reverse: false,
        }
    }

    /// Clamps every field into range. Non-finite values become 0.
    pub fn clamped(self) -> Self {
        let fix = |v: f64, lo: f64, hi: f64| if v.is_finite() { v.clamp(lo, hi) } else { 0.0 };
        Self {
            steering: fix(self.steering, -1.0, 1.0),
            throttle: fix(self.throttle, 0.0, 1.0),
            brake: fix(self.brake, 0.0, 1.0),
            reverse: self.reverse,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.steering.is_finite() && self.throttle.is_finite() && self.brake.is_finite()) {
            return Err(SimError::NonFiniteAction);
        }
        if !(-1.0..=1.0).contains(&self.steering)
            || !(0.0..=1.0).contains(&self.throttle)
            || !(0.0..=1.0).contains(&self.brake)
        {
            return Err(SimError::ActionOutOfRange(*self));
        }
        Ok(())
    }

    pub fn in_range(&self) -> bool {
        self.validate().is_ok()
    }
}

/// Finite table of discrete actions used by learnable policies.
///
/// The default table has 15 bins: steering levels `[-0.3, -0.1, 0, 0.1, 0.3]`
/// crossed with longitudinal levels `[brake 0.3, coast, throttle 0.4]`;
/// bin index = `steer_level * 3 + longitudinal_level`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionBins(Vec<Action>);

pub const DEFAULT_STEER_LEVELS: [f64; 5] = [-0.3, -0.1, 0.0, 0.1, 0.3];

impl Default for ActionBins {
    fn default() -> Self {
        let longitudinal = [(0.0, 0.3), (0.0, 0.0), (0.4, 0.0)];
        let bins = DEFAULT_STEER_LEVELS
            .iter()
            .flat_map(|&s| longitudinal.iter().map(move |&(t, b)| Action::new(s, t, b)))
            .collect();
        Self(bins)
    }
}

impl ActionBins {
    pub fn new(bins: Vec<Action>) -> Result<Self, SimError> {
        if bins.is_empty() {
            return Err(SimError::InvalidInput("action bin table is empty".into()));
        }
        for b in &bins {
            b.validate()?;
        }
        Ok(Self(bins))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn action(&self, bin: usize) -> Action {
        self.0[bin]
    }

    pub fn as_slice(&self) -> &[Action] {
        &self.0
    }

    /// Nearest bin by squared distance over (steering, throttle, brake); lowest index on ties.
    pub fn bin_of(&self, a: &Action) -> usize {
        let dist = |b: &Action| {
            (b.steering - a.steering).powi(2)
                + (b.throttle - a.throttle).powi(2)
                + (b.brake - a.brake).powi(2)
        };
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, b) in self.0.iter().enumerate() {
            let d = dist(b);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}
