//! Per-agent controllers and the scenario-level binding that builds them.

mod follow;
mod handle;
mod pedestrian;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use follow::*;
pub use handle::{BindContext, PolicyHandle, SpeedChange};
pub use pedestrian::*;

use crate::llm::{LlmAdapter, PromptEnvelope};
use crate::policy::{sample_bin, Policy};
use crate::sim::{Action, ControlContext, ControlError, ControlOutput, Controller, EventKind, LaneId};

/// IDM follower whose desired speed can change at scheduled ticks.
#[derive(Clone, Debug)]
pub struct ScriptedFollowController {
    pub params: FollowParams,
    pub schedule: Vec<SpeedChange>,
    pub ray_max: f64,
}

impl ScriptedFollowController {
    pub fn params_at(&self, tick: u64) -> FollowParams {
        let mut p = self.params.clone();
        for c in self.schedule.iter().filter(|c| c.tick <= tick) {
            p.desired_speed = c.desired_speed;
        }
        p
    }
}

impl Controller for ScriptedFollowController {
    fn act(&mut self, ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
        let p = self.params_at(ctx.tick);
        // a zero desired speed means "stop": hold the brake instead of creeping
        if p.desired_speed <= 1e-9 {
            let steer = lane_keep_steering(ctx.obs, &p, 0.0);
            return Ok(Action::new(steer, 0.0, 1.0).into());
        }
        Ok(scripted_follow(ctx.obs, &p, self.ray_max).into())
    }

    fn describe(&self) -> String {
        "scripted-follow".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaneSide {
    Left,
    Right,
}

/// Follows its lane, then moves one lane over starting at `change_tick`.
#[derive(Clone, Debug)]
pub struct ScriptedLaneChangeController {
    pub params: FollowParams,
    pub change_tick: u64,
    pub side: LaneSide,
    pub lane_width: f64,
    pub ray_max: f64,
    start_lane: Option<LaneId>,
}

impl ScriptedLaneChangeController {
    pub fn new(params: FollowParams, change_tick: u64, side: LaneSide, lane_width: f64, ray_max: f64) -> Self {
        Self {
            params,
            change_tick,
            side,
            lane_width,
            ray_max,
            start_lane: None,
        }
    }
}

impl Controller for ScriptedLaneChangeController {
    fn act(&mut self, ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
        let lane = ctx.world.agent(ctx.agent).and_then(|a| a.lane);
        let mut target = 0.0;
        if ctx.tick >= self.change_tick {
            let start = *self.start_lane.get_or_insert(lane.unwrap_or(LaneId::MAX));
            if lane == Some(start) {
                target = match self.side {
                    LaneSide::Left => self.lane_width,
                    LaneSide::Right => -self.lane_width,
                };
            }
        }
        let accel = follow_acceleration(ctx.obs, &self.params, self.ray_max);
        let (throttle, brake) = accel_to_pedals(&self.params, if accel.is_finite() { accel } else { -1e9 });
        Ok(Action::new(lane_keep_steering(ctx.obs, &self.params, target), throttle, brake).into())
    }

    fn describe(&self) -> String {
        "scripted-lane-change".into()
    }
}

/// Drives from adapter suggestions, falling back to its persona's IDM
/// parameters whenever the adapter fails.
pub struct PersonaDriver {
    pub persona: String,
    pub params: FollowParams,
    pub adapter: Arc<LlmAdapter>,
    pub query_interval: u64,
    pub collision_recovery: bool,
    pub ray_max: f64,
    last: Option<Action>,
    recovery: VecDeque<Action>,
}

impl PersonaDriver {
    pub fn new(persona: &str, params: FollowParams, adapter: Arc<LlmAdapter>, ray_max: f64) -> Self {
        Self {
            persona: persona.into(),
            params,
            adapter,
            query_interval: 1,
            collision_recovery: false,
            ray_max,
            last: None,
            recovery: VecDeque::new(),
        }
    }

    fn start_recovery(&mut self, ctx: &ControlContext<'_>) {
        let Some(hit) = ctx
            .world
            .events
            .iter()
            .find(|e| e.agent == ctx.agent && e.kind == EventKind::Collision)
        else {
            return;
        };
        let me = ctx.world.agent(ctx.agent);
        let other = hit.other.and_then(|o| ctx.world.agent(o));
        let (normal, what) = match (me, other) {
            (Some(a), Some(b)) => {
                let d = a.position() - b.position();
                let n = d.norm().max(1e-9);
                ((d.x / n, d.y / n), if b.kind.is_vehicle() { "vehicle" } else { "pedestrian" })
            }
            _ => ((0.0, 0.0), "unknown"),
        };
        let env = PromptEnvelope::collision_recovery(normal, what, ctx.obs.speed);
        self.recovery = match self.adapter.collision_recovery(&env) {
            Ok(script) => script.actions.into(),
            Err(e) => {
                log::warn!("agent {}: recovery unavailable ({e}), braking", ctx.agent);
                VecDeque::from([Action::FULL_BRAKE; 20])
            }
        };
    }
}

impl Controller for PersonaDriver {
    fn act(&mut self, ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
        if self.collision_recovery && self.recovery.is_empty() {
            self.start_recovery(ctx);
        }
        if let Some(a) = self.recovery.pop_front() {
            return Ok(a.into());
        }
        let due = self.last.is_none() || ctx.tick.is_multiple_of(self.query_interval.max(1));
        if !due {
            if let Some(a) = self.last {
                return Ok(a.into());
            }
        }
        let env = PromptEnvelope::persona_drive(&self.persona, ctx.obs, self.ray_max);
        match self.adapter.drive_suggestion(&env) {
            Ok(a) => {
                self.last = Some(a);
                Ok(a.into())
            }
            Err(e) => {
                log::debug!("agent {}: persona fallback ({e})", ctx.agent);
                self.last = None;
                Ok(ControlOutput {
                    action: scripted_follow(ctx.obs, &self.params, self.ray_max),
                    fallback: true,
                })
            }
        }
    }

    fn describe(&self) -> String {
        format!("llm-persona:{}", self.persona)
    }

    fn is_deterministic(&self) -> bool {
        self.adapter.is_mock()
    }
}

/// Samples bins from a learned policy with its own seeded generator.
pub struct LearnedController {
    pub policy: Arc<Policy>,
    pub greedy: bool,
    rng: ChaCha8Rng,
}

impl LearnedController {
    pub fn new(policy: Arc<Policy>, seed: u64, greedy: bool) -> Self {
        Self {
            policy,
            greedy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for LearnedController {
    fn act(&mut self, ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
        let x = self.policy.features(ctx.obs).map_err(|e| ControlError(e.to_string()))?;
        let bin = if self.greedy {
            self.policy.greedy(&x)
        } else {
            sample_bin(&self.policy.probs(&x), &mut self.rng)
        };
        Ok(self.policy.bins.action(bin).into())
    }

    fn describe(&self) -> String {
        "learned".into()
    }
}

/// Latest-wins mailbox between a network handler and the sim stepper.
#[derive(Clone, Debug, Default)]
pub struct ControlSlot(Arc<Mutex<Option<Action>>>);

impl ControlSlot {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrites any control not yet consumed.
    pub fn put(&self, a: Action) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = Some(a);
    }

    pub fn take(&self) -> Option<Action> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

/// Applies whatever the remote human sent since the previous tick; idles
/// when nothing arrived.
pub struct GatewayController {
    pub slot: ControlSlot,
}

impl Controller for GatewayController {
    fn act(&mut self, _ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
        Ok(self.slot.take().unwrap_or(Action::IDLE).into())
    }

    fn describe(&self) -> String {
        "human-gateway".into()
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Plays back recorded actions indexed by tick.
pub struct ReplayController {
    pub actions: Vec<Action>,
    pub label: String,
}

impl Controller for ReplayController {
    fn act(&mut self, ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
        self.actions
            .get(ctx.tick as usize)
            .map(|a| (*a).into())
            .ok_or_else(|| ControlError(format!("no recorded action for tick {}", ctx.tick)))
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

pub struct ConstantController(pub Action);

impl Controller for ConstantController {
    fn act(&mut self, _ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
        Ok(self.0.into())
    }

    fn describe(&self) -> String {
        "constant".into()
    }
}
