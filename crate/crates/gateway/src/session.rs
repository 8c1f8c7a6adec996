//! One live session: the authoritative sim stepper state, inbound message
//! handling and persistence on close. Everything here is synchronous; the
//! server drives it from a dedicated thread.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use hfdrive::agents::{ControlSlot, PolicyHandle, ReplayController};
use hfdrive::feedback::{write_channels, FeedbackFrame, Ingestor, Modality};
use hfdrive::llm::{LlmAdapter, PromptEnvelope};
use hfdrive::reward::{slice_segments, write_pairs, PreferenceLabel, PreferencePair, PreferenceSource};
use hfdrive::scenario::{parse_scenario, InstanceOptions, Scenario};
use hfdrive::sim::{Action, AgentId, AgentKind, EpisodeLog, EpisodeRunner, Termination};
use serde::{Deserialize, Serialize};

use crate::protocol::{
    Ack, Body, ControlPayload, Guidance, SessionCommand, Snapshot, WireMessage,
};
use crate::GatewayError;

pub const SESSION_FORMAT_VERSION: u32 = 1;

pub const RECORD_FILE: &str = "session.json";
pub const EPISODE_FILE: &str = "episode.ndjson";
pub const FEEDBACK_DIR: &str = "feedback";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const TRANSCRIPT_FILE: &str = "messages.ndjson";
pub const SCENARIO_FILE: &str = "scenario.toml";

/// Segment ids of closed sessions, shared so preferences may span sessions.
pub type SegmentIndex = Arc<RwLock<BTreeSet<String>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOptions {
    /// Name of a scenario in the gateway's catalog.
    pub scenario: String,
    pub participant: String,
    /// Falls back to the gateway's default seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Rebinds this vehicle to the human gateway.
    #[serde(default)]
    pub human_agent: Option<AgentId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    /// The episode reached its own end.
    Finished,
    Closed,
    Disconnected,
}

/// Index of a closed session's artifacts; file names are relative to the
/// session directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub format_version: u32,
    pub id: String,
    pub scenario: String,
    pub participant: String,
    pub seed: u64,
    pub human_agents: Vec<AgentId>,
    /// Unix seconds.
    pub started_at: f64,
    pub ended_at: f64,
    pub status: SessionStatus,
    /// Set when some artifact could not be written.
    pub incomplete: Option<String>,
    pub ticks: u64,
    pub episode_log: String,
    pub feedback_files: Vec<String>,
    pub pairs_file: String,
    pub preferences: Vec<PreferencePair>,
    pub transcript: String,
    pub scenario_file: String,
    /// Resolves relative paths inside the scenario file.
    pub scenario_base_dir: PathBuf,
    pub segment_len: usize,
    pub segments: Vec<String>,
}

impl SessionRecord {
    pub fn load(dir: &Path) -> Result<Self, GatewayError> {
        let path = dir.join(RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| GatewayError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Corrupt(format!("{}: {e}", path.display())))
    }

    /// Every artifact file the record points at.
    pub fn files(&self) -> Vec<String> {
        let mut v = vec![
            RECORD_FILE.to_string(),
            self.episode_log.clone(),
            self.pairs_file.clone(),
            self.transcript.clone(),
            self.scenario_file.clone(),
        ];
        v.extend(self.feedback_files.iter().cloned());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// Sim tick when the message was handled.
    pub tick: u64,
    pub inbound: bool,
    pub message: WireMessage,
}

/// Reply to one inbound message.
#[derive(Debug)]
pub struct Handled {
    pub reply: WireMessage,
    pub close: bool,
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn check_pseudonym(p: &str) -> Result<(), GatewayError> {
    let ok = !p.is_empty() && p.len() <= 32 && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(GatewayError::Invalid(format!(
            "participant {p:?} must be a pseudonym of 1-32 letters, digits, '-' or '_'"
        )))
    }
}

pub struct SessionCore {
    id: String,
    scenario: Scenario,
    participant: String,
    seed: u64,
    runner: EpisodeRunner,
    slots: BTreeMap<AgentId, ControlSlot>,
    ego: Option<AgentId>,
    ingestor: Ingestor,
    pairs: Vec<PreferencePair>,
    transcript: Vec<TranscriptEntry>,
    adapter: Arc<LlmAdapter>,
    known: SegmentIndex,
    started_at: f64,
    paused: bool,
}

impl SessionCore {
    pub fn new(
        id: String,
        scenario: &Scenario,
        opts: &SessionOptions,
        adapter: Arc<LlmAdapter>,
        known: SegmentIndex,
    ) -> Result<Self, GatewayError> {
        check_pseudonym(&opts.participant)?;
        let seed = opts.seed.ok_or_else(|| GatewayError::Invalid("a session seed is required".into()))?;
        let mut scenario = scenario.clone();
        if let Some(h) = opts.human_agent {
            let spec = scenario
                .spec
                .agents
                .iter_mut()
                .find(|a| a.id == h.0)
                .ok_or_else(|| GatewayError::Invalid(format!("scenario has no agent {h}")))?;
            if !spec.kind.is_vehicle() {
                return Err(GatewayError::Invalid(format!("agent {h} is a pedestrian")));
            }
            if spec.kind == AgentKind::Ego && !scenario.spec.allow_human_ego {
                return Err(GatewayError::Invalid(format!(
                    "agent {h} is the ego; the scenario must set allow_human_ego"
                )));
            }
            spec.policy = PolicyHandle::HumanGateway;
        }
        let errs = scenario.spec.validate(&scenario.base_dir);
        if !errs.is_empty() {
            return Err(GatewayError::Invalid(errs.join("; ")));
        }
        let mut inst_opts = InstanceOptions::new(seed);
        inst_opts.adapter = adapter.clone();
        let mut inst = scenario.instantiate(inst_opts).map_err(|e| GatewayError::Invalid(e.to_string()))?;
        // the session id keeps segment ids unique across sessions
        inst.meta.episode_id = format!("{id}-{}", scenario.spec.name);
        let slots = inst.slots.clone();
        let ego = inst.ego;
        let runner = inst.runner().map_err(|e| GatewayError::Invalid(e.to_string()))?;
        Ok(Self {
            id,
            scenario,
            participant: opts.participant.clone(),
            seed,
            runner,
            slots,
            ego,
            ingestor: Ingestor::new(),
            pairs: Vec::new(),
            transcript: Vec::new(),
            adapter,
            known,
            started_at: now_unix(),
            paused: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scenario_name(&self) -> &str {
        self.scenario.name()
    }

    pub fn participant(&self) -> &str {
        &self.participant
    }

    pub fn tick(&self) -> u64 {
        self.runner.world().tick
    }

    pub fn time(&self) -> f64 {
        self.runner.world().time()
    }

    pub fn is_done(&self) -> bool {
        self.runner.is_done()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn human_agents(&self) -> Vec<AgentId> {
        self.slots.keys().copied().collect()
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn snapshot(&self) -> WireMessage {
        let w = self.runner.world();
        WireMessage::new(Body::Snapshot(Snapshot {
            session: self.id.clone(),
            tick: w.tick,
            time: w.time(),
            agents: w.agents.clone(),
            events: w.events.clone(),
            road: (*w.road).clone(),
            ego: self.ego,
            human_agents: self.human_agents(),
            done: self.runner.is_done(),
        }))
        .at(w.tick, w.time())
    }

    /// Advances one tick unless paused. Returns `false` once the episode is over.
    pub fn step(&mut self) -> bool {
        if self.runner.is_done() {
            return false;
        }
        if self.paused {
            return true;
        }
        self.runner.tick()
    }

    /// Segment ids that exist in this session so far.
    pub fn segment_ids(&self) -> Vec<String> {
        slice_segments(&self.runner.partial_log(), self.scenario.spec.segment_len)
            .into_iter()
            .map(|s| s.id)
            .collect()
    }

    pub fn submit_preference(&mut self, a: &str, b: &str, label: PreferenceLabel) -> Result<PreferencePair, GatewayError> {
        let pair = PreferencePair::new(a, b, label, PreferenceSource::HumanExplicit, 1.0)
            .map_err(|e| GatewayError::Invalid(e.to_string()))?;
        let mine = self.segment_ids();
        let known = self.known.read().unwrap_or_else(|e| e.into_inner());
        for id in [a, b] {
            if !mine.iter().any(|s| s == id) && !known.contains(id) {
                return Err(GatewayError::Invalid(format!("unknown segment {id:?}")));
            }
        }
        drop(known);
        self.pairs.push(pair.clone());
        Ok(pair)
    }

    fn log_message(&mut self, inbound: bool, message: WireMessage) {
        let tick = self.tick();
        self.transcript.push(TranscriptEntry { tick, inbound, message });
    }

    fn stamp(&self, msg: WireMessage) -> WireMessage {
        msg.at(self.tick(), self.time())
    }

    fn ack(&self, of: &str, pair: Option<PreferencePair>) -> WireMessage {
        self.stamp(WireMessage::new(Body::Ack(Ack { of: of.to_string(), pair })))
    }

    fn apply_control(&mut self, c: &ControlPayload) -> Result<(), GatewayError> {
        let agent = match c.agent {
            Some(a) if self.slots.contains_key(&a) => a,
            Some(a) => return Err(GatewayError::Invalid(format!("agent {a} is not human-driven in this session"))),
            None => match self.slots.keys().collect::<Vec<_>>()[..] {
                [one] => *one,
                [] => return Err(GatewayError::Invalid("no human-driven agent in this session".into())),
                _ => return Err(GatewayError::Invalid("several human-driven agents; name one".into())),
            },
        };
        let action = c.action();
        action.validate().map_err(|e| GatewayError::Invalid(e.to_string()))?;
        self.slots[&agent].put(action);
        Ok(())
    }

    fn ingest(&mut self, frame: &FeedbackFrame) -> Result<(), GatewayError> {
        self.ingestor
            .ingest(frame)
            .map(|_| ())
            .map_err(|e| GatewayError::Invalid(e.to_string()))
    }

    fn guidance(&self) -> String {
        let log = self.runner.partial_log();
        let counts: Vec<(String, usize)> = match self.ego {
            Some(ego) => log
                .event_counts(ego)
                .into_iter()
                .map(|(k, n)| (k.name().to_string(), n))
                .collect(),
            None => Vec::new(),
        };
        self.adapter.guide_user(&PromptEnvelope::guide_user(self.tick(), &counts))
    }

    /// Applies one inbound message. Rejections become error replies and leave
    /// the session untouched.
    pub fn handle(&mut self, msg: WireMessage) -> Handled {
        let kind = msg.body.kind();
        let result: Result<(WireMessage, bool), GatewayError> = match &msg.body {
            Body::Snapshot(_) | Body::GuidanceText(_) | Body::Ack(_) | Body::Error(_) => {
                Err(GatewayError::Invalid(format!("{kind} messages are server-to-client only")))
            }
            Body::Control(c) => self.apply_control(c).map(|_| (self.ack(kind, None), false)),
            Body::FeedbackFrame(f) => self.ingest(f).map(|_| (self.ack(kind, None), false)),
            Body::ComfortRating(r) => {
                let frame = FeedbackFrame::new(Modality::ComfortRating, msg.timestamp.unwrap_or(self.time()), r.value);
                self.ingest(&frame).map(|_| (self.ack(kind, None), false))
            }
            Body::PreferenceChoice(p) => self
                .submit_preference(&p.a, &p.b, p.choice.into())
                .map(|pair| (self.ack(kind, Some(pair)), false)),
            Body::SessionControl(c) => Ok(match c.command {
                SessionCommand::Pause => {
                    self.paused = true;
                    (self.ack(kind, None), false)
                }
                SessionCommand::Resume => {
                    self.paused = false;
                    (self.ack(kind, None), false)
                }
                SessionCommand::RequestGuidance => {
                    let text = self.guidance();
                    (self.stamp(WireMessage::new(Body::GuidanceText(Guidance { text }))), false)
                }
                SessionCommand::Close => (self.ack(kind, None), true),
            }),
        };
        match result {
            Ok((reply, close)) => {
                self.log_message(true, msg);
                self.log_message(false, reply.clone());
                Handled { reply, close }
            }
            Err(e) => Handled {
                reply: self.stamp(WireMessage::error(format!("{kind}: {e}"))),
                close: false,
            },
        }
    }

    /// Ends the episode and writes every artifact under `root/<id>/`. Write
    /// failures mark the record incomplete; whatever could be written stays.
    pub fn close(mut self, status: SessionStatus, root: &Path) -> SessionRecord {
        self.runner.close(Termination::Closed);
        let log = self.runner.into_log();
        let dir = root.join(&self.id);
        let mut problems = Vec::new();
        if let Err(e) = std::fs::create_dir_all(&dir) {
            problems.push(format!("{}: {e}", dir.display()));
        }
        if let Err(e) = log.save(&dir.join(EPISODE_FILE)) {
            problems.push(format!("{EPISODE_FILE}: {e}"));
        }
        let (channels, warnings) = self.ingestor.finish();
        for w in &warnings {
            log::warn!(
                "session {}: {} observed at {:.2} Hz (nominal {})",
                self.id,
                w.channel,
                w.observed_hz,
                w.nominal_hz
            );
        }
        if let Err(e) = write_channels(&dir.join(FEEDBACK_DIR), &channels) {
            problems.push(format!("{FEEDBACK_DIR}: {e}"));
        }
        let feedback_files = channels
            .channels
            .keys()
            .map(|m| format!("{FEEDBACK_DIR}/{}.tsv", m.name()))
            .collect();
        if let Err(e) = write_pairs(&dir.join(PAIRS_FILE), &self.pairs) {
            problems.push(format!("{PAIRS_FILE}: {e}"));
        }
        let transcript: String = self
            .transcript
            .iter()
            .map(|t| serde_json::to_string(t).expect("transcript serializes") + "\n")
            .collect();
        if let Err(e) = std::fs::write(dir.join(TRANSCRIPT_FILE), transcript) {
            problems.push(format!("{TRANSCRIPT_FILE}: {e}"));
        }
        if let Err(e) = std::fs::write(dir.join(SCENARIO_FILE), self.scenario.spec.to_toml()) {
            problems.push(format!("{SCENARIO_FILE}: {e}"));
        }
        let segments: Vec<String> = slice_segments(&log, self.scenario.spec.segment_len)
            .into_iter()
            .map(|s| s.id)
            .collect();
        self.known
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .extend(segments.iter().cloned());

        let mut record = SessionRecord {
            format_version: SESSION_FORMAT_VERSION,
            id: self.id.clone(),
            scenario: self.scenario.name().to_string(),
            participant: self.participant,
            seed: self.seed,
            human_agents: self.slots.keys().copied().collect(),
            started_at: self.started_at,
            ended_at: now_unix(),
            status,
            incomplete: None,
            ticks: log.ticks.len() as u64,
            episode_log: EPISODE_FILE.into(),
            feedback_files,
            pairs_file: PAIRS_FILE.into(),
            preferences: self.pairs,
            transcript: TRANSCRIPT_FILE.into(),
            scenario_file: SCENARIO_FILE.into(),
            scenario_base_dir: self.scenario.base_dir.clone(),
            segment_len: self.scenario.spec.segment_len,
            segments,
        };
        if !problems.is_empty() {
            record.incomplete = Some(problems.join("; "));
        }
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        if let Err(e) = std::fs::write(dir.join(RECORD_FILE), json) {
            let msg = format!("{RECORD_FILE}: {e}");
            log::error!("session {}: {msg}", record.id);
            record.incomplete = Some(record.incomplete.map_or(msg.clone(), |p| format!("{p}; {msg}")));
        }
        record
    }
}

/// A closed session's episode next to its re-simulation from the recorded
/// human controls.
pub struct Replay {
    pub record: SessionRecord,
    pub recorded: EpisodeLog,
    pub replayed: EpisodeLog,
}

impl Replay {
    /// Same ticks and the same final state.
    pub fn matches(&self) -> bool {
        self.recorded.ticks == self.replayed.ticks && self.recorded.footer.final_state == self.replayed.footer.final_state
    }
}

/// Re-runs a closed session with its human agents played back from the log.
/// Persona drivers use the mock provider, as live sessions do by default.
pub fn replay_session(dir: &Path) -> Result<Replay, GatewayError> {
    let record = SessionRecord::load(dir)?;
    let path = dir.join(&record.scenario_file);
    let text = std::fs::read_to_string(&path).map_err(|e| GatewayError::io(&path, e))?;
    let scenario =
        parse_scenario(&text, &record.scenario_base_dir).map_err(|e| GatewayError::Corrupt(e.to_string()))?;
    let recorded =
        EpisodeLog::load(&dir.join(&record.episode_log)).map_err(|e| GatewayError::Corrupt(e.to_string()))?;
    let mut opts = InstanceOptions::new(record.seed);
    opts.max_ticks = Some(recorded.ticks.len() as u64);
    for agent in &record.human_agents {
        let actions = recorded.ticks.iter().map(|t| t.actions.get(agent).copied().unwrap_or(Action::IDLE)).collect();
        opts.overrides.insert(
            *agent,
            Box::new(ReplayController {
                actions,
                label: "human-gateway".into(),
            }),
        );
    }
    let mut inst = scenario.instantiate(opts).map_err(|e| GatewayError::Invalid(e.to_string()))?;
    inst.meta.episode_id = recorded.header.episode_id.clone();
    let replayed = inst.run().map_err(|e| GatewayError::Invalid(e.to_string()))?;
    Ok(Replay {
        record,
        recorded,
        replayed,
    })
}
