use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hfdrive::llm::LlmAdapter;
use hfdrive::reward::{slice_segments, PreferenceLabel, PreferencePair};
use hfdrive::scenario::{standard_suite, Scenario};
use hfdrive::sim::EpisodeLog;
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch};

use crate::protocol::{parse_message, Body, PreferenceChoice, SessionCommand, WireMessage};
use crate::session::{SegmentIndex, SessionCore, SessionOptions, SessionRecord, SessionStatus};
use crate::GatewayError;

#[derive(Clone)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    /// Sim steps per second.
    pub tick_rate: f64,
    /// Snapshot broadcasts per second, per client.
    pub snapshot_rate: f64,
    /// Closed sessions are written to `<data_dir>/<session id>/`.
    pub data_dir: PathBuf,
    pub catalog: Vec<Scenario>,
    pub adapter: Arc<LlmAdapter>,
    /// Used when a start request names no seed.
    pub default_seed: u64,
}

impl GatewayConfig {
    /// Loopback on port 8750, 20 Hz sim and broadcast, the standard scenarios
    /// and the mock LLM provider.
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8750)),
            tick_rate: 20.0,
            snapshot_rate: 20.0,
            data_dir: data_dir.into(),
            catalog: standard_suite(),
            adapter: Arc::new(LlmAdapter::mock()),
            default_seed: 0,
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        for (name, r) in [("tick_rate", self.tick_rate), ("snapshot_rate", self.snapshot_rate)] {
            if !(r > 0.0 && r <= 1000.0) {
                return Err(GatewayError::Invalid(format!("{name} {r} must be in (0, 1000] Hz")));
            }
        }
        if self.catalog.is_empty() {
            return Err(GatewayError::Invalid("scenario catalog is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub scenario: String,
    pub participant: String,
    pub live: bool,
    /// Closed sessions only.
    pub status: Option<SessionStatus>,
    pub ticks: u64,
}

enum Command {
    Message(WireMessage, oneshot::Sender<WireMessage>),
    Preference {
        a: String,
        b: String,
        label: PreferenceLabel,
        reply: oneshot::Sender<Result<PreferencePair, GatewayError>>,
    },
    Segments(oneshot::Sender<Vec<String>>),
    Close(SessionStatus),
}

struct Live {
    scenario: String,
    participant: String,
    commands: mpsc::Sender<Command>,
    snapshots: watch::Receiver<WireMessage>,
    record: watch::Receiver<Option<SessionRecord>>,
    attached: Arc<AtomicBool>,
}

pub struct Gateway {
    config: GatewayConfig,
    live: Mutex<BTreeMap<String, Live>>,
    closed: Mutex<BTreeMap<String, SessionRecord>>,
    known: SegmentIndex,
    next_id: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Gateway {
    /// Picks up sessions already recorded under the data directory so their
    /// segments can be referenced by new preferences.
    pub fn new(config: GatewayConfig) -> Result<Arc<Self>, GatewayError> {
        config.validate()?;
        std::fs::create_dir_all(&config.data_dir).map_err(|e| GatewayError::io(&config.data_dir, e))?;
        let mut closed = BTreeMap::new();
        let known = SegmentIndex::default();
        let entries = std::fs::read_dir(&config.data_dir).map_err(|e| GatewayError::io(&config.data_dir, e))?;
        for entry in entries.flatten() {
            if let Ok(rec) = SessionRecord::load(&entry.path()) {
                lock_write(&known).extend(rec.segments.iter().cloned());
                closed.insert(rec.id.clone(), rec);
            }
        }
        Ok(Arc::new(Self {
            config,
            live: Mutex::new(BTreeMap::new()),
            closed: Mutex::new(closed),
            known,
            next_id: AtomicU64::new(1),
        }))
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn fresh_id(&self) -> String {
        loop {
            let id = format!("s{:04}", self.next_id.fetch_add(1, Ordering::Relaxed));
            let taken = self.config.data_dir.join(&id).exists()
                || lock(&self.live).contains_key(&id)
                || lock(&self.closed).contains_key(&id);
            if !taken {
                return id;
            }
        }
    }

    /// Starts a session and its stepper thread; returns the session id.
    pub fn start_session(self: &Arc<Self>, opts: &SessionOptions) -> Result<String, GatewayError> {
        let scenario = self
            .config
            .catalog
            .iter()
            .find(|s| s.name() == opts.scenario)
            .ok_or_else(|| GatewayError::Invalid(format!("unknown scenario {:?}", opts.scenario)))?;
        let mut opts = opts.clone();
        opts.seed = opts.seed.or(Some(self.config.default_seed));
        let id = self.fresh_id();
        let core = SessionCore::new(id.clone(), scenario, &opts, self.config.adapter.clone(), self.known.clone())?;
        let (cmd_tx, cmd_rx) = mpsc::channel();
        let (snap_tx, snap_rx) = watch::channel(core.snapshot());
        let (rec_tx, rec_rx) = watch::channel(None);
        lock(&self.live).insert(
            id.clone(),
            Live {
                scenario: opts.scenario.clone(),
                participant: opts.participant.clone(),
                commands: cmd_tx,
                snapshots: snap_rx,
                record: rec_rx,
                attached: Arc::new(AtomicBool::new(false)),
            },
        );
        let period = Duration::from_secs_f64(1.0 / self.config.tick_rate);
        let gw = self.clone();
        std::thread::Builder::new()
            .name(format!("stepper-{id}"))
            .spawn(move || {
                let record = run_stepper(core, cmd_rx, snap_tx, period, &gw.config.data_dir);
                gw.finish(record, rec_tx);
            })
            .map_err(|e| GatewayError::Io {
                path: "stepper thread".into(),
                source: e,
            })?;
        log::info!("session {id} started on {}", opts.scenario);
        Ok(id)
    }

    fn finish(&self, record: SessionRecord, rec_tx: watch::Sender<Option<SessionRecord>>) {
        log::info!("session {} closed ({:?}, {} ticks)", record.id, record.status, record.ticks);
        if let Some(why) = &record.incomplete {
            log::error!("session {} is incomplete: {why}", record.id);
        }
        lock(&self.closed).insert(record.id.clone(), record.clone());
        lock(&self.live).remove(&record.id);
        let _ = rec_tx.send(Some(record));
    }

    fn send(&self, id: &str, cmd: Command) -> Result<(), GatewayError> {
        let live = lock(&self.live);
        let s = live.get(id).ok_or_else(|| self.missing(id))?;
        s.commands
            .send(cmd)
            .map_err(|_| GatewayError::Conflict(format!("session {id} is closing")))
    }

    fn missing(&self, id: &str) -> GatewayError {
        if lock(&self.closed).contains_key(id) {
            GatewayError::Conflict(format!("session {id} is closed"))
        } else {
            GatewayError::NotFound(id.to_string())
        }
    }

    /// Routes one inbound wire message to a live session and waits for its reply.
    pub async fn handle_message(&self, id: &str, msg: WireMessage) -> Result<WireMessage, GatewayError> {
        let (tx, rx) = oneshot::channel();
        self.send(id, Command::Message(msg, tx))?;
        rx.await.map_err(|_| GatewayError::Conflict(format!("session {id} closed")))
    }

    pub async fn submit_preference(
        &self,
        id: &str,
        a: &str,
        b: &str,
        label: PreferenceLabel,
    ) -> Result<PreferencePair, GatewayError> {
        let (tx, rx) = oneshot::channel();
        self.send(
            id,
            Command::Preference {
                a: a.to_string(),
                b: b.to_string(),
                label,
                reply: tx,
            },
        )?;
        rx.await.map_err(|_| GatewayError::Conflict(format!("session {id} closed")))?
    }

    pub async fn segments(&self, id: &str) -> Result<Vec<String>, GatewayError> {
        if let Some(rec) = self.record(id) {
            return Ok(rec.segments);
        }
        let (tx, rx) = oneshot::channel();
        self.send(id, Command::Segments(tx))?;
        rx.await.map_err(|_| GatewayError::Conflict(format!("session {id} closed")))
    }

    /// Asks a live session to close and waits for its record. Closing a closed
    /// session returns the existing record.
    pub async fn close_session(&self, id: &str, status: SessionStatus) -> Result<SessionRecord, GatewayError> {
        if let Some(rec) = self.record(id) {
            return Ok(rec);
        }
        let mut rx = lock(&self.live).get(id).map(|l| l.record.clone()).ok_or_else(|| self.missing(id))?;
        let _ = self.send(id, Command::Close(status));
        self.wait_record(&mut rx).await
    }

    /// Waits until a live session has closed by itself.
    pub async fn wait_closed(&self, id: &str) -> Result<SessionRecord, GatewayError> {
        if let Some(rec) = self.record(id) {
            return Ok(rec);
        }
        let mut rx = lock(&self.live).get(id).map(|l| l.record.clone()).ok_or_else(|| self.missing(id))?;
        self.wait_record(&mut rx).await
    }

    async fn wait_record(&self, rx: &mut watch::Receiver<Option<SessionRecord>>) -> Result<SessionRecord, GatewayError> {
        let got = rx
            .wait_for(|r| r.is_some())
            .await
            .map_err(|_| GatewayError::Conflict("session stepper exited without a record".into()))?;
        Ok(got.clone().expect("checked"))
    }

    pub fn record(&self, id: &str) -> Option<SessionRecord> {
        lock(&self.closed).get(id).cloned()
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let mut out: Vec<SessionSummary> = lock(&self.live)
            .iter()
            .map(|(id, l)| SessionSummary {
                id: id.clone(),
                scenario: l.scenario.clone(),
                participant: l.participant.clone(),
                live: true,
                status: None,
                ticks: l.snapshots.borrow().tick.unwrap_or(0),
            })
            .collect();
        out.extend(lock(&self.closed).values().map(|r| SessionSummary {
            id: r.id.clone(),
            scenario: r.scenario.clone(),
            participant: r.participant.clone(),
            live: false,
            status: Some(r.status),
            ticks: r.ticks,
        }));
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Closes every live session.
    pub async fn close_all(&self) {
        let ids: Vec<String> = lock(&self.live).keys().cloned().collect();
        for id in ids {
            if let Err(e) = self.close_session(&id, SessionStatus::Closed).await {
                log::warn!("closing {id}: {e}");
            }
        }
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/health", get(|| async { "ok" }))
            .route("/sessions", get(list_sessions).post(start_session))
            .route("/sessions/{id}", get(get_session))
            .route("/sessions/{id}/close", post(close_session))
            .route("/sessions/{id}/preferences", post(post_preference))
            .route("/sessions/{id}/segments", get(list_segments))
            .route("/sessions/{id}/segments/{segment}", get(get_segment))
            .route("/sessions/{id}/artifacts/{*name}", get(get_artifact))
            .route("/sessions/{id}/ws", get(ws_upgrade))
            .with_state(self.clone())
    }
}

fn lock_write<T>(l: &std::sync::RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|e| e.into_inner())
}

fn run_stepper(
    mut core: SessionCore,
    commands: mpsc::Receiver<Command>,
    snapshots: watch::Sender<WireMessage>,
    period: Duration,
    root: &std::path::Path,
) -> SessionRecord {
    let mut next = Instant::now() + period;
    let status = loop {
        let now = Instant::now();
        if now >= next {
            let alive = core.step();
            next += period;
            // after a long stall, resume the cadence instead of bursting
            if now > next + 4 * period {
                next = now + period;
            }
            let _ = snapshots.send(core.snapshot());
            if !alive {
                break SessionStatus::Finished;
            }
            continue;
        }
        match commands.recv_timeout(next - now) {
            Ok(Command::Message(msg, reply)) => {
                let handled = core.handle(msg);
                let _ = reply.send(handled.reply);
                if handled.close {
                    break SessionStatus::Closed;
                }
            }
            Ok(Command::Preference { a, b, label, reply }) => {
                let _ = reply.send(core.submit_preference(&a, &b, label));
            }
            Ok(Command::Segments(reply)) => {
                let _ = reply.send(core.segment_ids());
            }
            Ok(Command::Close(status)) => break status,
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break SessionStatus::Closed,
        }
    };
    core.close(status, root)
}

/// Binds the listener and serves in the background.
pub async fn serve(config: GatewayConfig) -> Result<GatewayHandle, GatewayError> {
    let gateway = Gateway::new(config)?;
    let addr = gateway.config.bind;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| GatewayError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| GatewayError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let app = gateway.router();
    let task = tokio::spawn(async move {
        let shutdown = async {
            let _ = stop_rx.await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            log::error!("gateway server: {e}");
        }
    });
    log::info!("gateway listening on {local}");
    Ok(GatewayHandle {
        addr: local,
        gateway,
        stop: Some(stop_tx),
        task,
    })
}

pub struct GatewayHandle {
    pub addr: SocketAddr,
    pub gateway: Arc<Gateway>,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl GatewayHandle {
    /// Closes live sessions, then stops accepting connections.
    pub async fn shutdown(mut self) {
        self.gateway.close_all().await;
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.task.await;
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let code = match &self {
            GatewayError::Invalid(_) => StatusCode::BAD_REQUEST,
            GatewayError::NotFound(_) => StatusCode::NOT_FOUND,
            GatewayError::Conflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type Gw = State<Arc<Gateway>>;

async fn list_sessions(State(gw): Gw) -> Json<Vec<SessionSummary>> {
    Json(gw.list())
}

async fn start_session(State(gw): Gw, Json(opts): Json<SessionOptions>) -> Result<Response, GatewayError> {
    let id = gw.start_session(&opts)?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "id": id })).into_response()).into_response())
}

async fn get_session(State(gw): Gw, Path(id): Path<String>) -> Result<Response, GatewayError> {
    if let Some(rec) = gw.record(&id) {
        return Ok(Json(rec).into_response());
    }
    gw.list()
        .into_iter()
        .find(|s| s.id == id)
        .map(|s| Json(s).into_response())
        .ok_or(GatewayError::NotFound(id))
}

async fn close_session(State(gw): Gw, Path(id): Path<String>) -> Result<Json<SessionRecord>, GatewayError> {
    gw.close_session(&id, SessionStatus::Closed).await.map(Json)
}

async fn post_preference(
    State(gw): Gw,
    Path(id): Path<String>,
    Json(p): Json<PreferenceChoice>,
) -> Result<Json<PreferencePair>, GatewayError> {
    gw.submit_preference(&id, &p.a, &p.b, p.choice.into()).await.map(Json)
}

async fn list_segments(State(gw): Gw, Path(id): Path<String>) -> Result<Json<Vec<String>>, GatewayError> {
    gw.segments(&id).await.map(Json)
}

/// One segment of a closed session, for side-by-side replay.
async fn get_segment(State(gw): Gw, Path((id, segment)): Path<(String, String)>) -> Result<Response, GatewayError> {
    let rec = gw.record(&id).ok_or_else(|| gw.missing(&id))?;
    let dir = gw.config.data_dir.join(&rec.id);
    let path = dir.join(&rec.episode_log);
    let log = tokio::task::spawn_blocking(move || EpisodeLog::load(&path))
        .await
        .map_err(|e| GatewayError::Corrupt(e.to_string()))?
        .map_err(|e| GatewayError::Corrupt(e.to_string()))?;
    slice_segments(&log, rec.segment_len)
        .into_iter()
        .find(|s| s.id == segment)
        .map(|s| Json(s).into_response())
        .ok_or_else(|| GatewayError::NotFound(format!("segment {segment} in {id}")))
}

async fn get_artifact(State(gw): Gw, Path((id, name)): Path<(String, String)>) -> Result<Response, GatewayError> {
    let rec = gw.record(&id).ok_or_else(|| gw.missing(&id))?;
    if !rec.files().contains(&name) {
        return Err(GatewayError::NotFound(format!("artifact {name} of {id}")));
    }
    let path = gw.config.data_dir.join(&rec.id).join(&name);
    let bytes = tokio::fs::read(&path).await.map_err(|e| GatewayError::io(&path, e))?;
    Ok(bytes.into_response())
}

async fn ws_upgrade(State(gw): Gw, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, GatewayError> {
    let (snapshots, attached) = {
        let live = lock(&gw.live);
        let l = live.get(&id).ok_or_else(|| gw.missing(&id))?;
        (l.snapshots.clone(), l.attached.clone())
    };
    if attached.swap(true, Ordering::SeqCst) {
        return Err(GatewayError::Conflict(format!("session {id} already has a client")));
    }
    Ok(ws.on_upgrade(move |socket| client_loop(socket, gw, id, snapshots)))
}

async fn send_msg(socket: &mut WebSocket, msg: &WireMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn client_loop(mut socket: WebSocket, gw: Arc<Gateway>, id: String, mut snapshots: watch::Receiver<WireMessage>) {
    let period = Duration::from_secs_f64(1.0 / gw.config.snapshot_rate);
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut last_tick: Option<u64> = None;
    let mut closed_by_client = false;
    loop {
        tokio::select! {
            _ = interval.tick() => {
                let over = snapshots.has_changed().is_err();
                let snap = snapshots.borrow_and_update().clone();
                if snap.tick > last_tick || last_tick.is_none() {
                    last_tick = snap.tick;
                    if !send_msg(&mut socket, &snap).await {
                        break;
                    }
                }
                if over {
                    closed_by_client = true;
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
            }
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        if !send_msg(&mut socket, &WireMessage::error("binary frames are not supported")).await {
                            break;
                        }
                        continue;
                    }
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                };
                let reply = match parse_message(text.as_str()) {
                    Err(e) => WireMessage::error(e),
                    Ok(msg) => {
                        let closing = matches!(&msg.body, Body::SessionControl(c) if c.command == SessionCommand::Close);
                        match gw.handle_message(&id, msg).await {
                            Ok(r) => {
                                if closing && matches!(r.body, Body::Ack(_)) {
                                    closed_by_client = true;
                                }
                                r
                            }
                            Err(e) => WireMessage::error(e.to_string()),
                        }
                    }
                };
                if !send_msg(&mut socket, &reply).await || closed_by_client {
                    break;
                }
            }
        }
    }
    if !closed_by_client {
        log::warn!("client of session {id} went away");
        let _ = gw.close_session(&id, SessionStatus::Disconnected).await;
    } else {
        let _ = socket.send(Message::Close(None)).await;
    }
}
