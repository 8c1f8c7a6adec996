//! Deterministic 2D multi-agent driving world.

mod agent;
mod episode;
mod events;
mod observe;
mod road;
mod world;

use thiserror::Error;

pub use agent::{
    Action, ActionBins, AgentId, AgentKind, AgentState, Pose, DEFAULT_STEER_LEVELS,
};
pub use episode::{
    run_episode, AgentInfo, ControlContext, ControlError, ControlOutput, Controller, EpisodeLog,
    EpisodeMeta, EpisodeRunner, LogError, LogFooter, LogHeader, Termination, TickRecord,
    LOG_FORMAT_VERSION,
};
pub use events::{detect_events, time_to_collision, DrivingEvent, EventKind};
pub use observe::{observe, Observation, MIN_RAY};
pub use road::{Crosswalk, Lane, LaneId, LaneProjection, RoadGraph, SpawnPoint};
pub use world::{
    step, EventThresholds, SensorConfig, VehicleParams, WorldConfig, WorldSnapshot, WorldState,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("no action supplied for vehicle {0}")]
    MissingAction(AgentId),
    #[error("action contains non-finite values")]
    NonFiniteAction,
    #[error("action out of range: {0:?}")]
    ActionOutOfRange(Action),
    #[error("invalid road graph: {0}")]
    InvalidRoad(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
