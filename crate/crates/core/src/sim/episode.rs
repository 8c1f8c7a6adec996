//! Episode runner and the newline-delimited episode log.
//!
//! Log layout (one JSON document per line, `record` field discriminates):
//!
//! ```text
//! {"record":"header","format_version":1,"episode_id":..,"scenario":..,"seed":..,"dt":..,"max_ticks":..,"agents":[..]}
//! {"record":"tick","tick":0,"agents":[..],"events":[..],"observations":{..},"actions":{..},"fallbacks":[..]}
//! ...
//! {"record":"footer","ticks":N,"termination":{..},"final_state":{..}}
//! ```
//!
//! Tick record `t` holds the state at tick `t` (including the events that
//! arrived with it), every vehicle's observation of that state, and the
//! actions chosen from it. The state after the last action is in the footer.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::agent::{Action, AgentId, AgentKind, AgentState};
use super::events::{DrivingEvent, EventKind};
use super::observe::{observe, Observation};
use super::world::{step, WorldSnapshot, WorldState};
use super::SimError;

pub const LOG_FORMAT_VERSION: u32 = 1;

/// What a controller sees when asked for an action.
pub struct ControlContext<'a> {
    pub tick: u64,
    pub agent: AgentId,
    pub obs: &'a Observation,
    pub world: &'a WorldState,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    pub action: Action,
    /// The controller fell back to its scripted behaviour this tick.
    pub fallback: bool,
}

impl From<Action> for ControlOutput {
    fn from(action: Action) -> Self {
        Self {
            action,
            fallback: false,
        }
    }
}

#[derive(Debug, Error)]
#[error("controller failure: {0}")]
pub struct ControlError(pub String);

/// Per-agent decision maker.
pub trait Controller: Send {
    fn act(&mut self, ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError>;

    /// Short label written to the log header.
    fn describe(&self) -> String;

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub kind: AgentKind,
    pub controller: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format_version: u32,
    pub episode_id: String,
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub max_ticks: u64,
    pub agents: Vec<AgentInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub agents: Vec<AgentState>,
    pub events: Vec<DrivingEvent>,
    pub observations: BTreeMap<AgentId, Observation>,
    pub actions: BTreeMap<AgentId, Action>,
    #[serde(default)]
    pub fallbacks: Vec<AgentId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    MaxTicks,
    EgoCollision,
    Aborted { diagnostic: String },
    /// Human session closed before `max_ticks`.
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogFooter {
    pub ticks: u64,
    pub termination: Termination,
    pub final_state: WorldSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord {
    Header(LogHeader),
    Tick(TickRecord),
    Footer(LogFooter),
}

// Internally tagged enums cannot read integer map keys (agent ids) directly,
// so the tag is split off by hand.
fn parse_record(line: &str) -> Result<LogRecord, serde_json::Error> {
    use serde::de::Error;
    let mut v: serde_json::Value = serde_json::from_str(line)?;
    let tag = v
        .as_object_mut()
        .and_then(|o| o.remove("record"))
        .ok_or_else(|| serde_json::Error::missing_field("record"))?;
    match tag.as_str() {
        Some("header") => serde_json::from_value(v).map(LogRecord::Header),
        Some("tick") => serde_json::from_value(v).map(LogRecord::Tick),
        Some("footer") => serde_json::from_value(v).map(LogRecord::Footer),
        _ => Err(serde_json::Error::custom(format!("unknown record {tag}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub footer: LogFooter,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("malformed log: {0}")]
    Malformed(String),
}

impl EpisodeLog {
    pub fn ego(&self) -> Option<AgentId> {
        self.header
            .agents
            .iter()
            .find(|a| a.kind == AgentKind::Ego)
            .map(|a| a.id)
    }

    pub fn is_complete(&self) -> bool {
        !matches!(self.footer.termination, Termination::Aborted { .. })
    }

    pub fn duration(&self) -> f64 {
        self.ticks.len() as f64 * self.header.dt
    }

    /// Events of one agent across the whole episode, final step included.
    pub fn events_of(&self, agent: AgentId) -> Vec<DrivingEvent> {
        self.ticks
            .iter()
            .flat_map(|t| t.events.iter())
            .chain(self.footer.final_state.events.iter())
            .filter(|e| e.agent == agent)
            .cloned()
            .collect()
    }

    /// Events the step taken at `ticks[index]` produced for `agent`. The last
    /// step's consequences live in the footer's final state.
    pub fn outcome_events(&self, index: usize, agent: AgentId) -> Vec<DrivingEvent> {
        let events = match self.ticks.get(index + 1) {
            Some(next) => &next.events,
            None => &self.footer.final_state.events,
        };
        events.iter().filter(|e| e.agent == agent).cloned().collect()
    }

    /// The agent's observation at `ticks[index]` with its event block holding
    /// the outcome of that step instead of its arrival.
    pub fn outcome_observation(&self, index: usize, agent: AgentId) -> Option<Observation> {
        let mut obs = self.ticks.get(index)?.observations.get(&agent)?.clone();
        obs.event_counts = [0.0; 6];
        for e in self.outcome_events(index, agent) {
            obs.event_counts[EventKind::index(e.kind)] += 1.0;
        }
        Some(obs)
    }

    pub fn event_counts(&self, agent: AgentId) -> BTreeMap<EventKind, usize> {
        let mut counts = BTreeMap::new();
        for e in self.events_of(agent) {
            *counts.entry(e.kind).or_insert(0) += 1;
        }
        counts
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        let mut line = |rec: &LogRecord| -> Result<(), LogError> {
            serde_json::to_writer(&mut w, rec).map_err(|e| LogError::Json { line: 0, source: e })?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&LogRecord::Header(self.header.clone()))?;
        for t in &self.ticks {
            line(&LogRecord::Tick(t.clone()))?;
        }
        line(&LogRecord::Footer(self.footer.clone()))?;
        Ok(())
    }

    pub fn to_ndjson_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut header = None;
        let mut ticks = Vec::new();
        let mut footer = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = parse_record(&line).map_err(|e| LogError::Json {
                line: i + 1,
                source: e,
            })?;
            match rec {
                LogRecord::Header(h) => header = Some(h),
                LogRecord::Tick(t) => ticks.push(t),
                LogRecord::Footer(f) => footer = Some(f),
            }
        }
        let header = header.ok_or_else(|| LogError::Malformed("missing header".into()))?;
        if header.format_version != LOG_FORMAT_VERSION {
            return Err(LogError::Malformed(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let footer = footer.ok_or_else(|| LogError::Malformed("missing footer".into()))?;
        Ok(Self {
            header,
            ticks,
            footer,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LogError> {
        let f = std::fs::File::open(path)?;
        Self::read_ndjson(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), LogError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_ndjson(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeMeta {
    pub episode_id: String,
    pub scenario: String,
    pub seed: u64,
    pub max_ticks: u64,
    /// Stop at the first Collision involving the ego.
    pub stop_on_ego_collision: bool,
}

/// Steps a world tick by tick with one controller per vehicle, recording the log.
pub struct EpisodeRunner {
    world: WorldState,
    controllers: BTreeMap<AgentId, Box<dyn Controller>>,
    meta: EpisodeMeta,
    header: LogHeader,
    ticks: Vec<TickRecord>,
    done: Option<Termination>,
    ego: Option<AgentId>,
}

impl EpisodeRunner {
    pub fn new(
        world: WorldState,
        controllers: BTreeMap<AgentId, Box<dyn Controller>>,
        meta: EpisodeMeta,
    ) -> Result<Self, SimError> {
        for a in world.agents.iter().filter(|a| a.kind.is_vehicle()) {
            if !controllers.contains_key(&a.id) {
                return Err(SimError::MissingAction(a.id));
            }
        }
        for id in controllers.keys() {
            if world.agent(*id).is_none_or(|a| !a.kind.is_vehicle()) {
                return Err(SimError::UnknownAgent(*id));
            }
        }
        let agents = world
            .agents
            .iter()
            .map(|a| AgentInfo {
                id: a.id,
                kind: a.kind,
                controller: controllers
                    .get(&a.id)
                    .map(|c| c.describe())
                    .unwrap_or_else(|| "pedestrian-script".into()),
            })
            .collect();
        let header = LogHeader {
            format_version: LOG_FORMAT_VERSION,
            episode_id: meta.episode_id.clone(),
            scenario: meta.scenario.clone(),
            seed: meta.seed,
            dt: world.dt,
            max_ticks: meta.max_ticks,
            agents,
        };
        let ego = world
            .agents
            .iter()
            .find(|a| a.kind == AgentKind::Ego)
            .map(|a| a.id);
        Ok(Self {
            world,
            controllers,
            meta,
            header,
            ticks: Vec::new(),
            done: None,
            ego,
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.ticks
    }

    /// Advances one tick. Returns `false` once the episode has terminated.
    pub fn tick(&mut self) -> bool {
        if self.done.is_some() {
            return false;
        }
        if self.ticks.len() as u64 >= self.meta.max_ticks {
            self.done = Some(Termination::MaxTicks);
            return false;
        }
        let mut observations = BTreeMap::new();
        let mut actions = BTreeMap::new();
        let mut fallbacks = Vec::new();
        for (id, ctrl) in self.controllers.iter_mut() {
            let obs = match observe(&self.world, *id) {
                Ok(o) => o,
                Err(e) => {
                    self.done = Some(Termination::Aborted {
                        diagnostic: e.to_string(),
                    });
                    return false;
                }
            };
            let ctx = ControlContext {
                tick: self.world.tick,
                agent: *id,
                obs: &obs,
                world: &self.world,
            };
            match ctrl.act(&ctx) {
                Ok(out) => {
                    if out.fallback {
                        fallbacks.push(*id);
                    }
                    actions.insert(*id, out.action);
                }
                Err(e) => {
                    self.done = Some(Termination::Aborted {
                        diagnostic: format!("agent {id}: {e}"),
                    });
                    return false;
                }
            }
            observations.insert(*id, obs);
        }
        let next = match step(&self.world, &actions) {
            Ok(n) => n,
            Err(e) => {
                self.done = Some(Termination::Aborted {
                    diagnostic: e.to_string(),
                });
                return false;
            }
        };
        self.ticks.push(TickRecord {
            tick: self.world.tick,
            agents: self.world.agents.clone(),
            events: self.world.events.clone(),
            observations,
            actions,
            fallbacks,
        });
        self.world = next;
        if self.meta.stop_on_ego_collision {
            if let Some(ego) = self.ego {
                if self
                    .world
                    .events
                    .iter()
                    .any(|e| e.agent == ego && e.kind == EventKind::Collision)
                {
                    self.done = Some(Termination::EgoCollision);
                    return false;
                }
            }
        }
        true
    }

    /// Ends the episode early with the given reason.
    pub fn close(&mut self, reason: Termination) {
        if self.done.is_none() {
            self.done = Some(reason);
        }
    }

    pub fn run(mut self) -> EpisodeLog {
        while self.tick() {}
        self.into_log()
    }

    /// The log so far, as if the episode were closed now.
    pub fn partial_log(&self) -> EpisodeLog {
        EpisodeLog {
            header: self.header.clone(),
            ticks: self.ticks.clone(),
            footer: LogFooter {
                ticks: self.ticks.len() as u64,
                termination: self.done.clone().unwrap_or(Termination::Closed),
                final_state: self.world.snapshot(),
            },
        }
    }

    pub fn into_log(self) -> EpisodeLog {
        let termination = self.done.unwrap_or(Termination::Closed);
        EpisodeLog {
            footer: LogFooter {
                ticks: self.ticks.len() as u64,
                termination,
                final_state: self.world.snapshot(),
            },
            header: self.header,
            ticks: self.ticks,
        }
    }
}

/// Runs an episode to completion. Controller failures abort the episode; the
/// partial log is returned with an `Aborted` termination.
pub fn run_episode(
    world: WorldState,
    controllers: BTreeMap<AgentId, Box<dyn Controller>>,
    meta: EpisodeMeta,
) -> Result<EpisodeLog, SimError> {
    Ok(EpisodeRunner::new(world, controllers, meta)?.run())
}
