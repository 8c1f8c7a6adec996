//! Chat-completion client abstraction with a deterministic mock provider.
//!
//! Four roles share one transport: persona driving, collision recovery, user
//! guidance and feedback interpretation. Replies use rigid plain-text
//! `key=value` schemas so that malformed output is detected, not guessed at:
//!
//! | role                 | reply schema                                              |
//! |----------------------|-----------------------------------------------------------|
//! | `persona-drive`      | `steer=<f> throttle=<f> brake=<f> [reverse=0/1]`          |
//! | `collision-recovery` | one drive line per tick, at most [`MAX_RECOVERY_TICKS`]   |
//! | `guide-user`         | free text, at most [`MAX_GUIDANCE_CHARS`] characters      |
//! | `interpret-feedback` | one `pair=<i> label=A/B/tie confidence=<f>` line per pair |

mod mock;
mod transport;

use std::collections::VecDeque;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::PreferenceLabel;
use crate::sim::{Action, Observation};

pub use mock::MockProvider;
pub use transport::{ChatMessage, ChatRequest, HttpTransport, Transport};

pub const MAX_PAYLOAD_BYTES: usize = 4096;
pub const MAX_RECOVERY_TICKS: usize = 100;
pub const MAX_GUIDANCE_CHARS: usize = 280;
pub const STATIC_TIP: &str =
    "Keep a steady speed, look well ahead, and brake early and gently when traffic slows.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Mock,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub provider: ProviderKind,
    /// Chat-completion URL; required for the external provider.
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Requests allowed in any 60 s window.
    pub budget_per_minute: u32,
    /// Append request/reply transcripts to this JSONL file.
    pub transcript: Option<std::path::PathBuf>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            endpoint: None,
            model: "gpt-4o".into(),
            timeout_s: 5.0,
            max_retries: 1,
            budget_per_minute: 60,
            transcript: None,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.budget_per_minute == 0 {
            return Err(AdapterError::Config("budget_per_minute must be > 0".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(AdapterError::Config("timeout_s must be > 0".into()));
        }
        if self.provider == ProviderKind::External && self.endpoint.is_none() {
            return Err(AdapterError::Config("external provider needs an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleTag {
    PersonaDrive,
    InterpretFeedback,
    GuideUser,
    CollisionRecovery,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::PersonaDrive => "persona-drive",
            RoleTag::InterpretFeedback => "interpret-feedback",
            RoleTag::GuideUser => "guide-user",
            RoleTag::CollisionRecovery => "collision-recovery",
        }
    }

    /// System prompt sent with every external request of this role.
    pub fn system_prompt(self) -> &'static str {
        match self {
            RoleTag::PersonaDrive => {
                "You drive a car in a 2D traffic simulation, imitating the named human persona. \
                 Reply with exactly one line: steer=<-1..1> throttle=<0..1> brake=<0..1>"
            }
            RoleTag::CollisionRecovery => {
                "A simulated car is blocked by an obstruction. Reply with one line per 50 ms tick, \
                 each `steer=<-1..1> throttle=<0..1> brake=<0..1> reverse=<0|1>`, at most 100 lines."
            }
            RoleTag::GuideUser => {
                "You coach a person learning to drive in a desk simulator. Reply with one short tip \
                 (under 280 characters) addressing their most frequent driving event."
            }
            RoleTag::InterpretFeedback => {
                "You convert a driver's physiological and explicit feedback into preferences. For \
                 every pair in the summary reply one line: pair=<i> label=<A|B|tie> confidence=<0..1>"
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptEnvelope {
    pub role: RoleTag,
    pub payload: String,
}

impl PromptEnvelope {
    pub fn new(role: RoleTag, payload: impl Into<String>) -> Result<Self, AdapterError> {
        let payload = payload.into();
        if payload.len() > MAX_PAYLOAD_BYTES {
            return Err(AdapterError::PayloadTooLarge(payload.len()));
        }
        Ok(Self { role, payload })
    }

    /// Persona-drive context: ego speed, lead gap and speed difference, lane info.
    pub fn persona_drive(persona: &str, obs: &Observation, ray_max: f64) -> Self {
        let lead = obs
            .nearest
            .iter()
            .filter(|n| n[0] > 0.0 && n[0] < ray_max && n[1].abs() < 1.75)
            .min_by(|a, b| a[0].total_cmp(&b[0]))
            .copied()
            .unwrap_or([ray_max, 0.0, 0.0]);
        let payload = format!(
            "persona={persona} speed={:.2} lead_gap={:.2} lead_dspeed={:.2} lane_offset={:.2} heading_error={:.3} crosswalk={:.2}",
            obs.speed, lead[0], lead[2], obs.lane_offset, obs.heading_error, obs.crosswalk_distance
        );
        Self {
            role: RoleTag::PersonaDrive,
            payload,
        }
    }

    /// Collision-recovery context; `normal` points from the obstruction toward the car
    /// in the car frame.
    pub fn collision_recovery(normal: (f64, f64), obstruction: &str, speed: f64) -> Self {
        let obstruction: String = obstruction.chars().take(200).collect();
        Self {
            role: RoleTag::CollisionRecovery,
            payload: format!(
                "normal_x={:.3} normal_y={:.3} speed={speed:.2} obstruction={obstruction}",
                normal.0, normal.1
            ),
        }
    }

    /// Guidance context from recent event counts of the human driver.
    pub fn guide_user(ticks: u64, counts: &[(String, usize)]) -> Self {
        let mut payload = format!("ticks={ticks}");
        for (k, n) in counts.iter().take(16) {
            payload.push_str(&format!(" {k}={n}"));
        }
        Self {
            role: RoleTag::GuideUser,
            payload,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("request timed out")]
    Timeout,
    #[error("per-minute request budget exhausted")]
    BudgetExhausted,
    #[error("could not parse reply: {0}")]
    ParseFailure(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("payload of {0} bytes exceeds the cap")]
    PayloadTooLarge(usize),
    #[error("invalid adapter config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterReply {
    pub correlation_id: u64,
    pub text: String,
}

/// Monotonic time source for budget accounting.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Hand-advanced clock for tests.
#[derive(Clone, Default)]
pub struct ManualClock(Arc<Mutex<Duration>>);

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.0.lock().unwrap()
    }
}

enum Backend {
    Mock(MockProvider),
    External(Box<dyn Transport>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryScript {
    pub actions: Vec<Action>,
    /// The reply exceeded [`MAX_RECOVERY_TICKS`] and was cut.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceAdjustment {
    pub pair: usize,
    pub label: PreferenceLabel,
    pub confidence: f64,
}

/// One adapter per episode or session; its budget is not shared.
pub struct LlmAdapter {
    config: AdapterConfig,
    backend: Backend,
    clock: Arc<dyn Clock>,
    window: Mutex<VecDeque<Duration>>,
    next_id: AtomicU64,
    issued: AtomicU64,
    transcript: Option<Mutex<File>>,
}

impl LlmAdapter {
    /// Mock provider with an effectively unlimited budget.
    pub fn mock() -> Self {
        Self::with_mock(MockProvider::default())
    }

    pub fn with_mock(mock: MockProvider) -> Self {
        let config = AdapterConfig {
            budget_per_minute: u32::MAX,
            ..AdapterConfig::default()
        };
        Self::build(config, Backend::Mock(mock), Arc::new(SystemClock::default()))
            .expect("default mock config is valid")
    }

    pub fn from_config(config: AdapterConfig) -> Result<Self, AdapterError> {
        match config.provider {
            ProviderKind::Mock => {
                Self::build(config, Backend::Mock(MockProvider::default()), Arc::new(SystemClock::default()))
            }
            ProviderKind::External => {
                let endpoint = config
                    .endpoint
                    .clone()
                    .ok_or_else(|| AdapterError::Config("external provider needs an endpoint".into()))?;
                let transport = HttpTransport::new(endpoint, std::env::var("HFDRIVE_LLM_API_KEY").ok());
                Self::build(config, Backend::External(Box::new(transport)), Arc::new(SystemClock::default()))
            }
        }
    }

    /// External provider over a caller-supplied transport and clock.
    pub fn with_transport(
        config: AdapterConfig,
        transport: Box<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, AdapterError> {
        Self::build(config, Backend::External(transport), clock)
    }

    /// Mock provider under an explicit config (budget applies) and clock.
    pub fn with_mock_config(
        config: AdapterConfig,
        mock: MockProvider,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, AdapterError> {
        Self::build(config, Backend::Mock(mock), clock)
    }

    fn build(config: AdapterConfig, backend: Backend, clock: Arc<dyn Clock>) -> Result<Self, AdapterError> {
        config.validate()?;
        let transcript = match &config.transcript {
            Some(p) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| AdapterError::Config(format!("transcript {}: {e}", p.display())))?,
            )),
            None => None,
        };
        Ok(Self {
            config,
            backend,
            clock,
            window: Mutex::new(VecDeque::new()),
            next_id: AtomicU64::new(1),
            issued: AtomicU64::new(0),
            transcript,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.backend, Backend::Mock(_))
    }

    /// Requests that passed the budget check (mock and external alike).
    pub fn issued(&self) -> u64 {
        self.issued.load(Ordering::SeqCst)
    }

    fn take_budget(&self) -> Result<(), AdapterError> {
        let now = self.clock.now();
        let mut w = self.window.lock().unwrap();
        while w.front().is_some_and(|t| now.saturating_sub(*t) >= Duration::from_secs(60)) {
            w.pop_front();
        }
        if w.len() >= self.config.budget_per_minute as usize {
            return Err(AdapterError::BudgetExhausted);
        }
        w.push_back(now);
        self.issued.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    fn log_transcript(&self, id: u64, env: &PromptEnvelope, result: &Result<String, AdapterError>) {
        if let Some(f) = &self.transcript {
            let rec = serde_json::json!({
                "correlation_id": id,
                "role": env.role.as_str(),
                "payload": env.payload,
                "reply": result.as_ref().ok(),
                "error": result.as_ref().err().map(|e| e.to_string()),
            });
            if let Ok(mut f) = f.lock() {
                let _ = writeln!(f, "{rec}");
            }
        }
    }

    /// Issues one request, retrying transient failures within the budget.
    pub fn request(&self, env: &PromptEnvelope) -> Result<AdapterReply, AdapterError> {
        if env.payload.len() > MAX_PAYLOAD_BYTES {
            return Err(AdapterError::PayloadTooLarge(env.payload.len()));
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let result = match &self.backend {
            Backend::Mock(m) => self.take_budget().map(|_| m.reply(env)),
            Backend::External(t) => {
                let req = ChatRequest::new(&self.config.model, env);
                let timeout = Duration::from_secs_f64(self.config.timeout_s);
                let mut attempt = 0;
                loop {
                    if let Err(e) = self.take_budget() {
                        break Err(e);
                    }
                    match t.complete(&req, timeout) {
                        Ok(text) => break Ok(text),
                        Err(e @ (AdapterError::Timeout | AdapterError::Transport(_)))
                            if attempt < self.config.max_retries =>
                        {
                            log::warn!("llm request {id} failed ({e}); retrying");
                            attempt += 1;
                        }
                        Err(e) => break Err(e),
                    }
                }
            }
        };
        self.log_transcript(id, env, &result);
        result.map(|text| AdapterReply {
            correlation_id: id,
            text,
        })
    }

    /// Action proposal for a persona driver; values are clamped into range.
    pub fn drive_suggestion(&self, env: &PromptEnvelope) -> Result<Action, AdapterError> {
        let reply = self.request(env)?;
        parse_drive_line(reply.text.trim())
    }

    /// Bounded maneuver script for backing away from an obstruction.
    pub fn collision_recovery(&self, env: &PromptEnvelope) -> Result<RecoveryScript, AdapterError> {
        let reply = self.request(env)?;
        parse_recovery(&reply.text)
    }

    /// Guidance text for the participant; failures degrade to [`STATIC_TIP`].
    pub fn guide_user(&self, env: &PromptEnvelope) -> String {
        match self.request(env) {
            Ok(r) => {
                let text: String = r.text.trim().chars().take(MAX_GUIDANCE_CHARS).collect();
                if text.is_empty() {
                    STATIC_TIP.to_string()
                } else {
                    text
                }
            }
            Err(e) => {
                log::warn!("guidance request failed: {e}");
                STATIC_TIP.to_string()
            }
        }
    }

    /// Label/confidence adjustments for the pairs listed in a segment summary.
    pub fn interpret_feedback(
        &self,
        env: &PromptEnvelope,
    ) -> Result<Vec<PreferenceAdjustment>, AdapterError> {
        let reply = self.request(env)?;
        parse_adjustments(&reply.text)
    }
}

fn kv_pairs(line: &str) -> impl Iterator<Item = (&str, &str)> {
    line.split_whitespace().filter_map(|tok| tok.split_once('='))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, AdapterError> {
    let x: f64 = v
        .trim_end_matches(',')
        .parse()
        .map_err(|_| AdapterError::ParseFailure(format!("{key}={v} is not a number")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(AdapterError::ParseFailure(format!("{key} is not finite")))
    }
}

/// Parses `steer=<f> throttle=<f> brake=<f> [reverse=0|1]`, clamping into range.
pub fn parse_drive_line(line: &str) -> Result<Action, AdapterError> {
    let (mut steer, mut throttle, mut brake, mut reverse) = (None, None, None, false);
    for (k, v) in kv_pairs(line) {
        match k {
            "steer" | "steering" => steer = Some(parse_f64(k, v)?),
            "throttle" => throttle = Some(parse_f64(k, v)?),
            "brake" => brake = Some(parse_f64(k, v)?),
            "reverse" => reverse = matches!(v, "1" | "true"),
            _ => {}
        }
    }
    match (steer, throttle, brake) {
        (Some(s), Some(t), Some(b)) => Ok(Action {
            steering: s,
            throttle: t,
            brake: b,
            reverse,
        }
        .clamped()),
        _ => Err(AdapterError::ParseFailure(format!(
            "expected steer/throttle/brake in {line:?}"
        ))),
    }
}

pub fn parse_recovery(text: &str) -> Result<RecoveryScript, AdapterError> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err(AdapterError::ParseFailure("empty recovery script".into()));
    }
    let truncated = lines.len() > MAX_RECOVERY_TICKS;
    if truncated {
        log::warn!(
            "recovery script of {} ticks truncated to {MAX_RECOVERY_TICKS}",
            lines.len()
        );
    }
    let actions = lines
        .into_iter()
        .take(MAX_RECOVERY_TICKS)
        .map(parse_drive_line)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RecoveryScript { actions, truncated })
}

pub fn parse_adjustments(text: &str) -> Result<Vec<PreferenceAdjustment>, AdapterError> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (mut pair, mut label, mut conf) = (None, None, None);
        for (k, v) in kv_pairs(line) {
            match k {
                "pair" => {
                    pair = Some(v.parse::<usize>().map_err(|_| {
                        AdapterError::ParseFailure(format!("bad pair index {v:?}"))
                    })?)
                }
                "label" => {
                    label = Some(match v {
                        "A" | "a" => PreferenceLabel::APreferred,
                        "B" | "b" => PreferenceLabel::BPreferred,
                        "tie" | "TIE" | "Tie" => PreferenceLabel::Tie,
                        other => {
                            return Err(AdapterError::ParseFailure(format!("bad label {other:?}")))
                        }
                    })
                }
                "confidence" => conf = Some(parse_f64(k, v)?),
                _ => {}
            }
        }
        match (pair, label, conf) {
            (Some(pair), Some(label), Some(c)) => out.push(PreferenceAdjustment {
                pair,
                label,
                confidence: c.clamp(1e-3, 1.0),
            }),
            _ => return Err(AdapterError::ParseFailure(format!("incomplete line {line:?}"))),
        }
    }
    Ok(out)
}

/// Fails every call with the given error.
pub struct FailingTransport(pub AdapterError);

impl Transport for FailingTransport {
    fn complete(&self, _req: &ChatRequest, _timeout: Duration) -> Result<String, AdapterError> {
        Err(self.0.clone())
    }
}

/// Opens a transcript path for reading back in tests and tools.
pub fn read_transcript(path: &Path) -> std::io::Result<Vec<serde_json::Value>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}
