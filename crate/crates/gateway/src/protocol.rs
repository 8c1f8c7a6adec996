//! Wire protocol: one JSON object per WebSocket text frame.
//!
//! ```json
//! {"version":1,"tick":41,"kind":"control","payload":{"steering":0.1,"throttle":0.3,"brake":0.0}}
//! ```
//!
//! `kind` selects the payload shape. `tick` and `timestamp` are optional on
//! inbound messages; the server stamps every outbound one with the current tick.

use hfdrive::feedback::FeedbackFrame;
use hfdrive::reward::{PreferenceLabel, PreferencePair};
use hfdrive::sim::{Action, AgentId, AgentState, DrivingEvent, RoadGraph};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<u64>,
    /// Seconds since session start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    #[serde(flatten)]
    pub body: Body,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum Body {
    /// Server to client, once per broadcast.
    Snapshot(Snapshot),
    Control(ControlPayload),
    FeedbackFrame(FeedbackFrame),
    ComfortRating(ComfortRating),
    PreferenceChoice(PreferenceChoice),
    /// Server to client.
    GuidanceText(Guidance),
    SessionControl(SessionControl),
    /// Server to client: the previous inbound message was accepted.
    Ack(Ack),
    /// Server to client: the previous inbound message was rejected; the
    /// connection stays open.
    Error(ErrorReply),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Snapshot(_) => "snapshot",
            Body::Control(_) => "control",
            Body::FeedbackFrame(_) => "feedback-frame",
            Body::ComfortRating(_) => "comfort-rating",
            Body::PreferenceChoice(_) => "preference-choice",
            Body::GuidanceText(_) => "guidance-text",
            Body::SessionControl(_) => "session-control",
            Body::Ack(_) => "ack",
            Body::Error(_) => "error",
        }
    }
}

/// Everything a client needs to draw one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub session: String,
    pub tick: u64,
    pub time: f64,
    pub agents: Vec<AgentState>,
    pub events: Vec<DrivingEvent>,
    pub road: RoadGraph,
    pub ego: Option<AgentId>,
    /// Agents this session's humans drive.
    pub human_agents: Vec<AgentId>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPayload {
    /// Needed only when the session has several human-driven agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
    #[serde(default)]
    pub reverse: bool,
}

impl ControlPayload {
    pub fn new(agent: Option<AgentId>, a: Action) -> Self {
        Self {
            agent,
            steering: a.steering,
            throttle: a.throttle,
            brake: a.brake,
            reverse: a.reverse,
        }
    }

    pub fn action(&self) -> Action {
        Action {
            steering: self.steering,
            throttle: self.throttle,
            brake: self.brake,
            reverse: self.reverse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComfortRating {
    /// In [-1, 1].
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Choice {
    A,
    B,
    Tie,
}

impl From<Choice> for PreferenceLabel {
    fn from(c: Choice) -> Self {
        match c {
            Choice::A => PreferenceLabel::APreferred,
            Choice::B => PreferenceLabel::BPreferred,
            Choice::Tie => PreferenceLabel::Tie,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceChoice {
    pub a: String,
    pub b: String,
    pub choice: Choice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guidance {
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionCommand {
    Pause,
    Resume,
    RequestGuidance,
    Close,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionControl {
    pub command: SessionCommand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    /// Kind of the accepted message.
    pub of: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PreferencePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub message: String,
}

impl WireMessage {
    pub fn new(body: Body) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            tick: None,
            timestamp: None,
            body,
        }
    }

    pub fn at(mut self, tick: u64, timestamp: f64) -> Self {
        self.tick = Some(tick);
        self.timestamp = Some(timestamp);
        self
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self::new(Body::Error(ErrorReply {
            message: message.into(),
        }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }
}

/// Parses one inbound frame, checking the protocol version.
pub fn parse_message(text: &str) -> Result<WireMessage, String> {
    let msg: WireMessage = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    if msg.version != PROTOCOL_VERSION {
        return Err(format!(
            "protocol version {} not supported (server speaks {PROTOCOL_VERSION})",
            msg.version
        ));
    }
    Ok(msg)
}
