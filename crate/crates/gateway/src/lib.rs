//! Real-time bridge between the simulator and human participants.
//!
//! Each session owns one sim stepper thread with an authoritative clock.
//! WebSocket handlers talk to it through an ordered command channel and read
//! snapshots from a watch channel, so a slow client never stalls the sim.
//! HTTP endpoints list, start and close sessions and serve their artifacts.

mod protocol;
mod server;
mod session;

use std::path::Path;

use thiserror::Error;

pub use protocol::{
    parse_message, Ack, Body, Choice, ComfortRating, ControlPayload, ErrorReply, Guidance, PreferenceChoice,
    SessionCommand, SessionControl, Snapshot, WireMessage, PROTOCOL_VERSION,
};
pub use server::{serve, Gateway, GatewayConfig, GatewayHandle, SessionSummary};
pub use session::{
    check_pseudonym, replay_session, Handled, Replay, SegmentIndex, SessionCore, SessionOptions, SessionRecord,
    SessionStatus, TranscriptEntry, EPISODE_FILE, FEEDBACK_DIR, PAIRS_FILE, RECORD_FILE, SCENARIO_FILE,
    SESSION_FORMAT_VERSION, TRANSCRIPT_FILE,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("no session {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt session data: {0}")]
    Corrupt(String),
}

impl GatewayError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        GatewayError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
