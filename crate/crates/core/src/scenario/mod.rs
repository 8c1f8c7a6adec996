//! Scenario files: strict TOML describing the road, the agent roster and
//! the scoring knobs of one experiment.

mod polyline;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use polyline::{import_polylines, parse_polylines, polylines_to_road, CHAIN_TOLERANCE};

use crate::agents::{BindContext, ControlSlot, PolicyHandle};
use crate::llm::LlmAdapter;
use crate::reward::{PairingConfig, StressWeights};
use crate::sim::{
    AgentId, AgentKind, AgentState, Controller, Crosswalk, EpisodeLog, EpisodeMeta, EpisodeRunner, Lane,
    Pose, RoadGraph, SimError, SpawnPoint, WorldConfig, WorldState,
};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn format_version() -> u32 {
    SCENARIO_FORMAT_VERSION
}

fn max_ticks() -> u64 {
    600
}

fn segment_len() -> usize {
    40
}

fn yes() -> bool {
    true
}

/// Lane centerlines read from a polyline file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolylineImport {
    pub path: PathBuf,
    pub lane_width: f64,
    pub speed_limit: f64,
}

/// Inline lanes, or lanes imported from a polyline file; crosswalks and
/// spawn points may be added to either.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import: Option<PolylineImport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lanes: Vec<Lane>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crosswalks: Vec<Crosswalk>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spawn_points: Vec<SpawnPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: u32,
    pub kind: AgentKind,
    /// Initial pose; vehicles need this or `spawn_point`. Pedestrians start on their path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spawn: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spawn_point: Option<usize>,
    #[serde(default)]
    pub speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub policy: PolicyHandle,
}

impl AgentSpec {
    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(if self.kind.is_vehicle() { 1.0 } else { 0.3 })
    }
}

/// Seeded perturbation of vehicle start states.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Half-width of the uniform shift along the heading, meters.
    #[serde(default)]
    pub position: f64,
    /// Half-width of the uniform initial speed change, m/s.
    #[serde(default)]
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Episode length cap; 600 ticks (30 s at the default 20 Hz) when omitted.
    #[serde(default = "max_ticks")]
    pub max_ticks: u64,
    /// Preference segment length, ticks.
    #[serde(default = "segment_len")]
    pub segment_len: usize,
    #[serde(default = "yes")]
    pub stop_on_ego_collision: bool,
    /// Lets a human-gateway binding drive the ego (data collection only).
    #[serde(default)]
    pub allow_human_ego: bool,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub jitter: Jitter,
    pub road: RoadSpec,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub stress: StressWeights,
    #[serde(default)]
    pub pairing: PairingConfig,
}

/// A validated spec with its road resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub road: RoadGraph,
    pub base_dir: PathBuf,
}

/// Per-run overrides when turning a scenario into a runnable episode.
pub struct InstanceOptions {
    pub seed: u64,
    pub adapter: Arc<LlmAdapter>,
    /// Replaces the ego's bound controller.
    pub ego: Option<Box<dyn Controller>>,
    /// Replaces the bound controllers of these vehicles.
    pub overrides: BTreeMap<AgentId, Box<dyn Controller>>,
    pub max_ticks: Option<u64>,
}

impl InstanceOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            adapter: Arc::new(LlmAdapter::mock()),
            ego: None,
            overrides: BTreeMap::new(),
            max_ticks: None,
        }
    }
}

pub struct Instance {
    pub world: WorldState,
    pub controllers: BTreeMap<AgentId, Box<dyn Controller>>,
    pub slots: BTreeMap<AgentId, ControlSlot>,
    pub meta: EpisodeMeta,
    pub ego: Option<AgentId>,
}

impl Instance {
    pub fn runner(self) -> Result<EpisodeRunner, ScenarioError> {
        Ok(EpisodeRunner::new(self.world, self.controllers, self.meta)?)
    }

    pub fn run(self) -> Result<EpisodeLog, ScenarioError> {
        Ok(self.runner()?.run())
    }
}

impl ScenarioSpec {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Every schema-level problem found; file references resolve against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Vec<String> {
        let mut errs = Vec::new();
        if self.format_version != SCENARIO_FORMAT_VERSION {
            errs.push(format!("unsupported format_version {}", self.format_version));
        }
        if self.name.trim().is_empty() {
            errs.push("name must not be empty".into());
        }
        if self.max_ticks == 0 {
            errs.push("max_ticks must be >= 1".into());
        }
        if self.segment_len == 0 {
            errs.push("segment_len must be >= 1".into());
        }
        if !(self.world.dt > 0.0 && self.world.dt.is_finite()) {
            errs.push(format!("world.dt {} must be > 0", self.world.dt));
        }
        if self.world.sensor.rays == 0 || !(self.world.sensor.ray_max > 0.0) {
            errs.push("world.sensor needs rays >= 1 and ray_max > 0".into());
        }
        if !(self.jitter.position >= 0.0 && self.jitter.speed >= 0.0) {
            errs.push("jitter widths must be >= 0".into());
        }
        if let Err(e) = self.stress.validate() {
            errs.push(format!("stress: {e}"));
        }
        if !(self.pairing.tie_epsilon >= 0.0 && self.pairing.confidence_scale > 0.0) {
            errs.push("pairing: tie_epsilon must be >= 0 and confidence_scale > 0".into());
        }

        match (&self.road.import, self.road.lanes.is_empty()) {
            (Some(_), false) => errs.push("road: give either inline lanes or an import, not both".into()),
            (None, true) => errs.push("road: no lanes and no import".into()),
            (Some(imp), true) => {
                if !base_dir.join(&imp.path).is_file() {
                    errs.push(format!("road.import.path {} does not exist", imp.path.display()));
                }
            }
            (None, false) => {}
        }

        if self.agents.is_empty() {
            errs.push("agents: roster is empty".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.agents {
            if !seen.insert(a.id) {
                errs.push(format!("agents: duplicate id {}", a.id));
            }
        }
        let egos = self.agents.iter().filter(|a| a.kind == AgentKind::Ego).count();
        if egos > 1 {
            errs.push(format!("agents: {egos} egos, at most one allowed"));
        }
        for a in &self.agents {
            let at = format!("agent {}", a.id);
            let max = self.world.max_speed(a.kind);
            if !(a.speed >= 0.0 && a.speed <= max) {
                errs.push(format!("{at}: speed {} outside [0, {max}]", a.speed));
            }
            if !(a.radius() > 0.0 && a.radius().is_finite()) {
                errs.push(format!("{at}: radius must be > 0"));
            }
            match (a.kind.is_vehicle(), a.policy.is_pedestrian()) {
                (true, true) => errs.push(format!("{at}: a vehicle cannot use a pedestrian-script policy")),
                (false, false) => errs.push(format!("{at}: pedestrians need a pedestrian-script policy")),
                _ => {}
            }
            if a.kind.is_vehicle() {
                match (a.spawn, a.spawn_point) {
                    (None, None) => errs.push(format!("{at}: needs spawn or spawn_point")),
                    (Some(_), Some(_)) => errs.push(format!("{at}: give spawn or spawn_point, not both")),
                    (None, Some(i)) if i >= self.road.spawn_points.len() => {
                        errs.push(format!("{at}: spawn_point {i} does not exist"))
                    }
                    (Some(p), None) if !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite()) => {
                        errs.push(format!("{at}: non-finite spawn pose"))
                    }
                    _ => {}
                }
            }
            if a.kind == AgentKind::Ego && matches!(a.policy, PolicyHandle::HumanGateway) && !self.allow_human_ego {
                errs.push(format!("{at}: ego bound to human-gateway requires allow_human_ego = true"));
            }
            if let PolicyHandle::PedestrianScript(s) = &a.policy {
                if let Err(e) = s.validate(self.world.pedestrian_max_speed) {
                    errs.push(format!("{at}: {e}"));
                }
            } else {
                errs.extend(a.policy.validate(max).into_iter().map(|e| format!("{at}: {e}")));
            }
            if let PolicyHandle::Learned { policy, .. } = &a.policy {
                if !base_dir.join(policy).is_file() {
                    errs.push(format!("{at}: policy file {} does not exist", policy.display()));
                }
            }
        }
        errs
    }

    pub fn resolve_road(&self, base_dir: &Path) -> Result<RoadGraph, ScenarioError> {
        let mut road = match &self.road.import {
            Some(imp) => import_polylines(&base_dir.join(&imp.path), imp.lane_width, imp.speed_limit)?,
            None => RoadGraph {
                lanes: self.road.lanes.clone(),
                ..RoadGraph::default()
            },
        };
        road.crosswalks = self.road.crosswalks.clone();
        road.spawn_points = self.road.spawn_points.clone();
        road.validate().map_err(ScenarioError::Invalid)?;
        Ok(road)
    }
}

/// Parses and fully validates scenario text, collecting every problem.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))?;
    let mut unknown = Vec::new();
    let parsed: Result<ScenarioSpec, _> = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()));
    let mut errs: Vec<String> = unknown.iter().map(|k| format!("unknown key `{k}`")).collect();
    let spec = match parsed {
        Ok(s) => s,
        Err(e) => {
            errs.push(e.to_string().trim().to_string());
            return Err(ScenarioError::Invalid(errs));
        }
    };
    errs.extend(spec.validate(base_dir));
    if !errs.is_empty() {
        return Err(ScenarioError::Invalid(errs));
    }
    let road = spec.resolve_road(base_dir)?;
    Ok(Scenario {
        spec,
        road,
        base_dir: base_dir.to_path_buf(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base)
}

pub const STANDARD_NAMES: [&str; 3] = ["car-following", "pedestrian-crosswalk", "lane-change-traffic"];

/// Scenario files shipped with the library.
pub fn standard_source(name: &str) -> Option<&'static str> {
    match name {
        "car-following" => Some(include_str!("../../scenarios/car-following.toml")),
        "pedestrian-crosswalk" => Some(include_str!("../../scenarios/pedestrian-crosswalk.toml")),
        "lane-change-traffic" => Some(include_str!("../../scenarios/lane-change-traffic.toml")),
        _ => None,
    }
}

pub fn standard(name: &str) -> Result<Scenario, ScenarioError> {
    let text = standard_source(name).ok_or_else(|| ScenarioError::Invalid(vec![format!("no standard scenario {name:?}")]))?;
    parse_scenario(text, Path::new("."))
}

/// The three-scenario suite: car following, a pedestrian crosswalk and a cut-in.
pub fn standard_suite() -> Vec<Scenario> {
    STANDARD_NAMES.iter().map(|n| standard(n).expect("shipped scenarios are valid")).collect()
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn ego(&self) -> Option<AgentId> {
        self.spec.agents.iter().find(|a| a.kind == AgentKind::Ego).map(|a| AgentId(a.id))
    }

    /// Deterministic when every binding is (mock LLM counts as deterministic).
    pub fn is_deterministic(&self, mock_llm: bool) -> bool {
        self.spec.agents.iter().all(|a| a.policy.deterministic(mock_llm))
    }

    /// Builds the world and binds every vehicle's controller.
    pub fn instantiate(&self, mut opts: InstanceOptions) -> Result<Instance, ScenarioError> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut agents = Vec::new();
        let mut pedestrians = BTreeMap::new();
        let mut controllers: BTreeMap<AgentId, Box<dyn Controller>> = BTreeMap::new();
        let mut ctx = BindContext::new(spec.world.sensor.ray_max, opts.adapter.clone(), opts.seed);
        ctx.base_dir = self.base_dir.clone();
        let mut errs = Vec::new();
        for a in &spec.agents {
            let id = AgentId(a.id);
            let mut pose = match (a.spawn, a.spawn_point, &a.policy) {
                (Some(p), _, _) => p,
                (None, Some(i), _) => self.road.spawn_points[i].pose,
                (None, None, PolicyHandle::PedestrianScript(s)) => Pose::new(s.path[0].x, s.path[0].y, 0.0),
                (None, None, _) => unreachable!("validated"),
            };
            let mut speed = a.speed;
            if a.kind.is_vehicle() && (spec.jitter.position > 0.0 || spec.jitter.speed > 0.0) {
                let dx = spec.jitter.position * (2.0 * rng.random::<f64>() - 1.0);
                let dv = spec.jitter.speed * (2.0 * rng.random::<f64>() - 1.0);
                pose = Pose::new(pose.x + dx * pose.heading.cos(), pose.y + dx * pose.heading.sin(), pose.heading);
                speed = (speed + dv).clamp(0.0, spec.world.max_speed(a.kind));
            }
            agents.push(AgentState {
                id,
                kind: a.kind,
                pose,
                speed,
                wheelbase: None,
                radius: a.radius(),
                lane: None,
                s: 0.0,
                reversing: false,
                accel: 0.0,
                yaw_rate: 0.0,
            });
            match &a.policy {
                PolicyHandle::PedestrianScript(s) => {
                    pedestrians.insert(id, s.clone());
                }
                _ if a.kind == AgentKind::Ego && opts.ego.is_some() => {
                    controllers.insert(id, opts.ego.take().expect("checked"));
                }
                _ if opts.overrides.contains_key(&id) => {
                    controllers.insert(id, opts.overrides.remove(&id).expect("checked"));
                }
                h => match h.bind(id, &mut ctx) {
                    Ok(c) => {
                        controllers.insert(id, c);
                    }
                    Err(e) => errs.push(format!("agent {}: {e}", a.id)),
                },
            }
        }
        for id in opts.overrides.keys() {
            errs.push(format!("controller override for {id}, which is not a vehicle in this scenario"));
        }
        if !errs.is_empty() {
            return Err(ScenarioError::Invalid(errs));
        }
        let world = WorldState::new(self.road.clone(), spec.world.clone(), agents, pedestrians)?;
        Ok(Instance {
            world,
            controllers,
            slots: ctx.slots,
            meta: EpisodeMeta {
                episode_id: format!("{}-s{}", spec.name, opts.seed),
                scenario: spec.name.clone(),
                seed: opts.seed,
                max_ticks: opts.max_ticks.unwrap_or(spec.max_ticks),
                stop_on_ego_collision: spec.stop_on_ego_collision,
            },
            ego: self.ego(),
        })
    }

    /// Runs the scenario with its own bindings.
    pub fn run(&self, seed: u64) -> Result<EpisodeLog, ScenarioError> {
        self.instantiate(InstanceOptions::new(seed))?.run()
    }
}
