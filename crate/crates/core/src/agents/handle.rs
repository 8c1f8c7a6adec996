use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    persona_preset, ConstantController, ControlSlot, FollowParams, GatewayController, LaneSide,
    LearnedController, PedestrianScript, PersonaDriver, ScriptedFollowController,
    ScriptedLaneChangeController,
};
use crate::llm::LlmAdapter;
use crate::policy::Policy;
use crate::sim::{Action, AgentId, Controller};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedChange {
    pub tick: u64,
    pub desired_speed: f64,
}

fn normal() -> String {
    "normal".into()
}

fn one() -> u64 {
    1
}

fn lane_width() -> f64 {
    3.5
}

/// How an agent is driven, as written in a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyHandle {
    #[serde(rename_all = "snake_case")]
    ScriptedFollow {
        #[serde(default = "normal")]
        persona: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        desired_speed: Option<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        speed_schedule: Vec<SpeedChange>,
    },
    #[serde(rename_all = "snake_case")]
    ScriptedLaneChange {
        #[serde(default = "normal")]
        persona: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        desired_speed: Option<f64>,
        change_tick: u64,
        side: LaneSide,
        #[serde(default = "lane_width")]
        lane_width: f64,
    },
    PedestrianScript(PedestrianScript),
    #[serde(rename_all = "snake_case")]
    LlmPersona {
        #[serde(default = "normal")]
        persona: String,
        #[serde(default = "one")]
        query_interval: u64,
        #[serde(default)]
        collision_recovery: bool,
    },
    #[serde(rename_all = "snake_case")]
    Learned {
        policy: PathBuf,
        #[serde(default)]
        greedy: bool,
    },
    HumanGateway,
    Constant {
        action: Action,
    },
}

/// Shared resources a handle may need when it becomes a controller.
pub struct BindContext {
    pub ray_max: f64,
    pub adapter: Arc<LlmAdapter>,
    /// Seed for stochastic controllers; mixed with the agent id.
    pub seed: u64,
    /// Relative policy paths resolve against this directory.
    pub base_dir: PathBuf,
    /// Mailboxes created for human-gateway agents.
    pub slots: BTreeMap<AgentId, ControlSlot>,
}

impl BindContext {
    pub fn new(ray_max: f64, adapter: Arc<LlmAdapter>, seed: u64) -> Self {
        Self {
            ray_max,
            adapter,
            seed,
            base_dir: PathBuf::from("."),
            slots: BTreeMap::new(),
        }
    }
}

impl PolicyHandle {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicyHandle::ScriptedFollow { .. } => "scripted-follow",
            PolicyHandle::ScriptedLaneChange { .. } => "scripted-lane-change",
            PolicyHandle::PedestrianScript(_) => "pedestrian-script",
            PolicyHandle::LlmPersona { .. } => "llm-persona",
            PolicyHandle::Learned { .. } => "learned",
            PolicyHandle::HumanGateway => "human-gateway",
            PolicyHandle::Constant { .. } => "constant",
        }
    }

    /// Whether two episodes with the same seed give the same actions.
    /// `mock_llm` says whether persona drivers talk to the mock provider.
    pub fn deterministic(&self, mock_llm: bool) -> bool {
        match self {
            PolicyHandle::LlmPersona { .. } => mock_llm,
            PolicyHandle::HumanGateway => false,
            _ => true,
        }
    }

    pub fn is_pedestrian(&self) -> bool {
        matches!(self, PolicyHandle::PedestrianScript(_))
    }

    fn params(persona: &str, desired_speed: Option<f64>) -> Result<FollowParams, String> {
        let mut p = persona_preset(persona).ok_or_else(|| format!("unknown persona {persona:?}"))?;
        if let Some(v) = desired_speed {
            p.desired_speed = v;
        }
        Ok(p)
    }

    /// Every problem with the parameter block; `max_speed` bounds speeds.
    pub fn validate(&self, max_speed: f64) -> Vec<String> {
        let mut errs = Vec::new();
        let speed_ok = |v: f64| v.is_finite() && (0.0..=max_speed).contains(&v);
        match self {
            PolicyHandle::ScriptedFollow {
                persona,
                desired_speed,
                speed_schedule,
            } => {
                match Self::params(persona, *desired_speed) {
                    Ok(p) => {
                        if let Err(e) = p.validate() {
                            errs.push(e);
                        }
                    }
                    Err(e) => errs.push(e),
                }
                for c in speed_schedule {
                    if !speed_ok(c.desired_speed) {
                        errs.push(format!("speed_schedule desired_speed {} outside [0, {max_speed}]", c.desired_speed));
                    }
                }
                if speed_schedule.windows(2).any(|w| w[1].tick < w[0].tick) {
                    errs.push("speed_schedule ticks must be non-decreasing".into());
                }
            }
            PolicyHandle::ScriptedLaneChange {
                persona,
                desired_speed,
                lane_width,
                ..
            } => {
                if let Err(e) = Self::params(persona, *desired_speed).and_then(|p| p.validate()) {
                    errs.push(e);
                }
                if !(*lane_width > 0.0 && lane_width.is_finite()) {
                    errs.push(format!("lane_width {lane_width} must be > 0"));
                }
            }
            PolicyHandle::PedestrianScript(s) => {
                if let Err(e) = s.validate(f64::INFINITY) {
                    errs.push(e);
                }
            }
            PolicyHandle::LlmPersona {
                persona, query_interval, ..
            } => {
                if persona_preset(persona).is_none() {
                    errs.push(format!("unknown persona {persona:?}"));
                }
                if *query_interval == 0 {
                    errs.push("query_interval must be >= 1".into());
                }
            }
            PolicyHandle::Learned { policy, .. } => {
                if policy.as_os_str().is_empty() {
                    errs.push("learned policy path is empty".into());
                }
            }
            PolicyHandle::HumanGateway => {}
            PolicyHandle::Constant { action } => {
                if let Err(e) = action.validate() {
                    errs.push(e.to_string());
                }
            }
        }
        errs
    }

    /// Builds the controller for a vehicle. Pedestrian scripts are not
    /// controllers and are rejected here.
    pub fn bind(&self, agent: AgentId, ctx: &mut BindContext) -> Result<Box<dyn Controller>, String> {
        let errs = self.validate(f64::INFINITY);
        if !errs.is_empty() {
            return Err(errs.join("; "));
        }
        Ok(match self {
            PolicyHandle::ScriptedFollow {
                persona,
                desired_speed,
                speed_schedule,
            } => Box::new(ScriptedFollowController {
                params: Self::params(persona, *desired_speed)?,
                schedule: speed_schedule.clone(),
                ray_max: ctx.ray_max,
            }),
            PolicyHandle::ScriptedLaneChange {
                persona,
                desired_speed,
                change_tick,
                side,
                lane_width,
            } => Box::new(ScriptedLaneChangeController::new(
                Self::params(persona, *desired_speed)?,
                *change_tick,
                *side,
                *lane_width,
                ctx.ray_max,
            )),
            PolicyHandle::PedestrianScript(_) => {
                return Err(format!("agent {agent}: pedestrian scripts cannot drive a vehicle"))
            }
            PolicyHandle::LlmPersona {
                persona,
                query_interval,
                collision_recovery,
            } => {
                let mut d = PersonaDriver::new(persona, Self::params(persona, None)?, ctx.adapter.clone(), ctx.ray_max);
                d.query_interval = *query_interval;
                d.collision_recovery = *collision_recovery;
                Box::new(d)
            }
            PolicyHandle::Learned { policy, greedy } => {
                let path = ctx.base_dir.join(policy);
                let p = Policy::load(&path).map_err(|e| e.to_string())?;
                let seed = ctx.seed ^ (u64::from(agent.0) << 32);
                Box::new(LearnedController::new(Arc::new(p), seed, *greedy))
            }
            PolicyHandle::HumanGateway => {
                let slot = ControlSlot::new();
                ctx.slots.insert(agent, slot.clone());
                Box::new(GatewayController { slot })
            }
            PolicyHandle::Constant { action } => Box::new(ConstantController(*action)),
        })
    }
}
