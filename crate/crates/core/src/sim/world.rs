use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::agent::{Action, AgentId, AgentKind, AgentState, Pose};
use super::events::{detect_events, DrivingEvent};
use super::road::RoadGraph;
use super::SimError;
use crate::agents::PedestrianScript;
use crate::geom::{normalize_angle, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Front-wheel angle at full steering, rad.
    pub max_steer: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub max_speed: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            max_steer: 0.5,
            max_accel: 3.0,
            max_brake: 8.0,
            max_speed: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventThresholds {
    /// HardBrake when longitudinal accel < -hard_brake, m/s^2.
    pub hard_brake: f64,
    /// AbruptAccel when longitudinal accel > abrupt_accel, m/s^2.
    pub abrupt_accel: f64,
    /// NearMiss when time-to-collision < ttc, s.
    pub ttc: f64,
    pub yield_distance: f64,
    pub yield_speed: f64,
    /// RapidLaneChange when |lateral speed| exceeds this during a lane change, m/s.
    pub lateral_speed: f64,
}

impl Default for EventThresholds {
    fn default() -> Self {
        Self {
            hard_brake: 4.0,
            abrupt_accel: 3.0,
            ttc: 1.5,
            yield_distance: 10.0,
            yield_speed: 2.0,
            lateral_speed: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub rays: usize,
    /// Angular width of the forward arc, rad.
    pub arc: f64,
    pub ray_max: f64,
    pub nearest_k: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: 16,
            arc: std::f64::consts::PI,
            ray_max: 50.0,
            nearest_k: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub dt: f64,
    pub vehicle: VehicleParams,
    pub pedestrian_max_speed: f64,
    pub thresholds: EventThresholds,
    pub sensor: SensorConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            vehicle: VehicleParams::default(),
            pedestrian_max_speed: 3.0,
            thresholds: EventThresholds::default(),
            sensor: SensorConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn max_speed(&self, kind: AgentKind) -> f64 {
        if kind.is_vehicle() {
            self.vehicle.max_speed
        } else {
            self.pedestrian_max_speed
        }
    }
}

/// Complete simulator state at one tick. Cheap to clone: static parts are shared.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub tick: u64,
    pub dt: f64,
    /// Sorted by id.
    pub agents: Vec<AgentState>,
    /// Events emitted by the step that produced this state.
    pub events: Vec<DrivingEvent>,
    pub road: Arc<RoadGraph>,
    pub config: Arc<WorldConfig>,
    pub pedestrians: Arc<BTreeMap<AgentId, PedestrianScript>>,
}

/// Serializable dynamic part of a [`WorldState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub tick: u64,
    pub agents: Vec<AgentState>,
    pub events: Vec<DrivingEvent>,
}

impl WorldState {
    pub fn new(
        road: RoadGraph,
        config: WorldConfig,
        mut agents: Vec<AgentState>,
        pedestrians: BTreeMap<AgentId, PedestrianScript>,
    ) -> Result<Self, SimError> {
        let road = road.validated()?;
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(SimError::InvalidInput("dt must be > 0".into()));
        }
        agents.sort_by_key(|a| a.id);
        if agents.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(SimError::InvalidInput("agent ids must be unique".into()));
        }
        for a in &mut agents {
            if !(a.radius > 0.0) {
                return Err(SimError::InvalidInput(format!("agent {}: radius must be > 0", a.id)));
            }
            if !a.is_finite() {
                return Err(SimError::InvalidInput(format!("agent {}: non-finite state", a.id)));
            }
            if !(0.0..=config.max_speed(a.kind)).contains(&a.speed) {
                return Err(SimError::InvalidInput(format!("agent {}: speed out of range", a.id)));
            }
            match (a.kind.is_vehicle(), a.wheelbase) {
                (false, Some(_)) => {
                    return Err(SimError::InvalidInput(format!(
                        "agent {}: pedestrians have no wheelbase",
                        a.id
                    )))
                }
                (true, None) => a.wheelbase = Some(config.vehicle.wheelbase),
                (true, Some(l)) if !(l > 0.0) => {
                    return Err(SimError::InvalidInput(format!(
                        "agent {}: wheelbase must be > 0",
                        a.id
                    )))
                }
                _ => {}
            }
            if !a.kind.is_vehicle() && !pedestrians.contains_key(&a.id) {
                return Err(SimError::InvalidInput(format!(
                    "pedestrian {} has no script",
                    a.id
                )));
            }
            a.pose.heading = normalize_angle(a.pose.heading);
            a.lane = road.locate(a.position(), a.lane);
            if let Some(lane) = a.lane.and_then(|id| road.lane(id)) {
                a.s = lane.project(a.position()).s;
            }
        }
        let mut world = Self {
            tick: 0,
            dt: config.dt,
            agents,
            events: Vec::new(),
            road: Arc::new(road),
            config: Arc::new(config),
            pedestrians: Arc::new(pedestrians),
        };
        // pedestrians start wherever their script puts them at tick 0
        let placed: Vec<AgentState> = world
            .agents
            .iter()
            .map(|a| world.advance_pedestrian(a, 0))
            .collect();
        world.agents = placed;
        Ok(world)
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.agents
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.agents[i])
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            tick: self.tick,
            agents: self.agents.clone(),
            events: self.events.clone(),
        }
    }

    /// Elapsed simulated time, seconds.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    fn advance_pedestrian(&self, a: &AgentState, tick: u64) -> AgentState {
        let mut next = a.clone();
        if a.kind.is_vehicle() {
            return next;
        }
        if let Some(script) = self.pedestrians.get(&a.id) {
            let (pos, heading, moving) = script.position_at(tick, self.dt);
            next.pose = Pose::new(pos.x, pos.y, heading);
            next.speed = if moving { script.speed } else { 0.0 };
            next.lane = self.road.locate(pos, a.lane);
            if let Some(lane) = next.lane.and_then(|id| self.road.lane(id)) {
                next.s = lane.project(pos).s;
            }
        }
        next
    }
}

/// Advances the world by one tick with the kinematic bicycle model.
///
/// Every vehicle must have an action; pedestrians follow their scripts.
pub fn step(world: &WorldState, actions: &BTreeMap<AgentId, Action>) -> Result<WorldState, SimError> {
    for (id, action) in actions {
        let agent = world.agent(*id).ok_or(SimError::UnknownAgent(*id))?;
        if !agent.kind.is_vehicle() {
            return Err(SimError::InvalidInput(format!(
                "pedestrian {id} cannot take a vehicle action"
            )));
        }
        action.validate()?;
    }
    let dt = world.dt;
    let cfg = &world.config;
    let mut agents = Vec::with_capacity(world.agents.len());
    for a in &world.agents {
        if !a.kind.is_vehicle() {
            let mut p = world.advance_pedestrian(a, world.tick + 1);
            p.accel = (p.speed - a.speed) / dt;
            p.yaw_rate = normalize_angle(p.pose.heading - a.pose.heading) / dt;
            agents.push(p);
            continue;
        }
        let action = actions.get(&a.id).ok_or(SimError::MissingAction(a.id))?;
        let vp = &cfg.vehicle;
        let wheelbase = a.wheelbase.unwrap_or(vp.wheelbase);
        let dir = if a.reversing { -1.0 } else { 1.0 };

        let mut reversing = a.reversing;
        let mut accel_cmd = action.throttle * vp.max_accel - action.brake * vp.max_brake;
        if action.reverse != a.reversing {
            if a.speed <= 0.0 {
                reversing = action.reverse;
            } else {
                // opposite gear requested while rolling: any pedal input decelerates
                accel_cmd = -(action.throttle * vp.max_accel + action.brake * vp.max_brake);
            }
        }

        let delta = action.steering * vp.max_steer;
        let heading = a.pose.heading;
        let x = a.pose.x + dir * a.speed * heading.cos() * dt;
        let y = a.pose.y + dir * a.speed * heading.sin() * dt;
        let yaw_rate = dir * a.speed / wheelbase * delta.tan();
        let new_heading = normalize_angle(heading + yaw_rate * dt);
        let speed = (a.speed + accel_cmd * dt).clamp(0.0, vp.max_speed);

        let pos = Vec2::new(x, y);
        let lane = world.road.locate(pos, a.lane).or(a.lane);
        let s = lane
            .and_then(|id| world.road.lane(id))
            .map(|l| l.project(pos).s)
            .unwrap_or(a.s);
        agents.push(AgentState {
            pose: Pose {
                x,
                y,
                heading: new_heading,
            },
            speed,
            lane,
            s,
            reversing,
            accel: (speed - a.speed) / dt,
            yaw_rate,
            ..a.clone()
        });
    }
    let mut next = WorldState {
        tick: world.tick + 1,
        agents,
        events: Vec::new(),
        ..world.clone()
    };
    next.events = detect_events(world, &next);
    Ok(next)
}
