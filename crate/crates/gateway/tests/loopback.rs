//! End-to-end over real sockets on 127.0.0.1.

use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use hfdrive::feedback::{read_channels, Modality};
use hfdrive::reward::{read_pairs, EpisodeSegment, PreferenceLabel, PreferencePair, PreferenceSource};
use hfdrive::sim::{Action, AgentId, EpisodeLog};
use hfdrive_gateway::*;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<tokio::net::TcpStream>>;

fn config(dir: &tempfile::TempDir, tick_rate: f64, snapshot_rate: f64) -> GatewayConfig {
    let mut c = GatewayConfig::new(dir.path());
    c.bind = SocketAddr::from(([127, 0, 0, 1], 0));
    c.tick_rate = tick_rate;
    c.snapshot_rate = snapshot_rate;
    c
}

fn opts(human: Option<u32>) -> SessionOptions {
    SessionOptions {
        scenario: "car-following".into(),
        participant: "tester".into(),
        seed: Some(1),
        human_agent: human.map(AgentId),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.unwrap()
}

fn status_of<T: std::fmt::Debug>(r: Result<T, ureq::Error>) -> u16 {
    match r {
        Ok(_) => 200,
        Err(ureq::Error::StatusCode(c)) => c,
        Err(e) => panic!("{e}"),
    }
}

async fn connect(addr: SocketAddr, id: &str) -> Ws {
    connect_async(format!("ws://{addr}/sessions/{id}/ws")).await.unwrap().0
}

async fn send(ws: &mut Ws, text: String) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

/// Reads frames, checking snapshot ticks strictly increase, until a
/// non-snapshot reply arrives.
async fn reply(ws: &mut Ws, last: &mut Option<u64>) -> WireMessage {
    loop {
        let m = next(ws, last).await.expect("connection open");
        if !matches!(m.body, Body::Snapshot(_)) {
            return m;
        }
    }
}

async fn next(ws: &mut Ws, last: &mut Option<u64>) -> Option<WireMessage> {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("frame in time")?;
        match frame.ok()? {
            Message::Text(t) => {
                let m = parse_message(t.as_str()).unwrap();
                if let Body::Snapshot(s) = &m.body {
                    assert!(Some(s.tick) > *last || last.is_none(), "tick {} after {last:?}", s.tick);
                    *last = Some(s.tick);
                }
                return Some(m);
            }
            Message::Close(_) => return None,
            _ => {}
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn port_in_use_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut c = config(&dir, 20.0, 20.0);
    c.bind = taken.local_addr().unwrap();
    match serve(c).await {
        Err(GatewayError::Bind { .. }) => {}
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("bound a port in use"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn rates_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    assert!(serve(config(&dir, 0.0, 20.0)).await.is_err());
    assert!(serve(config(&dir, 20.0, f64::NAN)).await.is_err());
}

#[tokio::test(flavor = "multi_thread")]
async fn http_session_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(config(&dir, 20.0, 20.0)).await.unwrap();
    let base = format!("http://{}", h.addr);

    let b = base.clone();
    let (health, listed, started, bad) = blocking(move || {
        let health = ureq::get(format!("{b}/health")).call().unwrap().body_mut().read_to_string().unwrap();
        let listed: Vec<SessionSummary> = ureq::get(format!("{b}/sessions")).call().unwrap().body_mut().read_json().unwrap();
        let started: Value = ureq::post(format!("{b}/sessions"))
            .send_json(json!({"scenario": "car-following", "participant": "p1", "seed": 4}))
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        let bad = status_of(
            ureq::post(format!("{b}/sessions")).send_json(json!({"scenario": "moon-base", "participant": "p1", "seed": 4})),
        );
        (health, listed, started, bad)
    })
    .await;
    assert_eq!(health, "ok");
    assert!(listed.is_empty());
    assert_eq!(bad, 400);
    let id = started["id"].as_str().unwrap().to_string();

    tokio::time::sleep(Duration::from_millis(300)).await;
    let (b, i) = (base.clone(), id.clone());
    let (live, record, second_close, artifact, sneaky, missing) = blocking(move || {
        let live: SessionSummary = ureq::get(format!("{b}/sessions/{i}")).call().unwrap().body_mut().read_json().unwrap();
        let record: SessionRecord =
            ureq::post(format!("{b}/sessions/{i}/close")).send_empty().unwrap().body_mut().read_json().unwrap();
        let second: SessionRecord =
            ureq::post(format!("{b}/sessions/{i}/close")).send_empty().unwrap().body_mut().read_json().unwrap();
        let artifact = ureq::get(format!("{b}/sessions/{i}/artifacts/{EPISODE_FILE}"))
            .call()
            .unwrap()
            .body_mut()
            .read_to_string()
            .unwrap();
        let sneaky = status_of(ureq::get(format!("{b}/sessions/{i}/artifacts/..%2F..%2Fetc%2Fpasswd")).call());
        let missing = status_of(ureq::get(format!("{b}/sessions/nope")).call());
        let same = second == record;
        (live, record, same, artifact, sneaky, missing)
    })
    .await;
    assert!(live.live);
    assert_eq!(live.participant, "p1");
    assert_eq!(record.status, SessionStatus::Closed);
    assert!(record.ticks > 0);
    assert!(second_close);
    let log = EpisodeLog::read_ndjson(artifact.as_bytes()).unwrap();
    assert_eq!(log.ticks.len() as u64, record.ticks);
    assert_eq!(sneaky, 404);
    assert_eq!(missing, 404);

    // closed sessions refuse clients
    assert!(connect_async(format!("ws://{}/sessions/{id}/ws", h.addr)).await.is_err());
    let listed = h.gateway.list();
    assert_eq!(listed.len(), 1);
    assert!(!listed[0].live);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn teleoperation_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    // fast broadcast so the client sees each tick promptly
    let h = serve(config(&dir, 20.0, 200.0)).await.unwrap();
    let id = h.gateway.start_session(&opts(Some(1))).unwrap();
    let mut ws = connect(h.addr, &id).await;
    assert!(connect_async(format!("ws://{}/sessions/{id}/ws", h.addr)).await.is_err(), "second client");

    let mut last = None;
    let t = loop {
        match next(&mut ws, &mut last).await.unwrap().body {
            Body::Snapshot(s) if s.tick >= 5 => break s.tick,
            _ => {}
        }
    };
    let a = Action::new(-0.04, 0.61, 0.0);
    send(&mut ws, WireMessage::new(Body::Control(ControlPayload::new(None, a))).to_json()).await;
    assert!(matches!(reply(&mut ws, &mut last).await.body, Body::Ack(_)));

    send(&mut ws, r#"{"version":1,"kind":"feedback-frame","payload":{"channel":"eda"}}"#.into()).await;
    assert!(matches!(reply(&mut ws, &mut last).await.body, Body::Error(_)));
    send(&mut ws, "not json at all".into()).await;
    assert!(matches!(reply(&mut ws, &mut last).await.body, Body::Error(_)));

    send(&mut ws, WireMessage::new(Body::ComfortRating(ComfortRating { value: 0.75 })).to_json()).await;
    assert!(matches!(reply(&mut ws, &mut last).await.body, Body::Ack(_)));
    let before = last;
    for _ in 0..3 {
        next(&mut ws, &mut last).await.unwrap();
    }
    assert!(last > before, "session kept running after errors");

    let close = WireMessage::new(Body::SessionControl(SessionControl {
        command: SessionCommand::Close,
    }));
    send(&mut ws, close.to_json()).await;
    assert!(matches!(reply(&mut ws, &mut last).await.body, Body::Ack(_)));
    while next(&mut ws, &mut last).await.is_some() {}

    let rec = h.gateway.wait_closed(&id).await.unwrap();
    assert_eq!(rec.status, SessionStatus::Closed);
    let sdir = dir.path().join(&id);
    let log = EpisodeLog::load(&sdir.join(EPISODE_FILE)).unwrap();
    let applied: Vec<u64> = log.ticks.iter().filter(|r| r.actions[&AgentId(1)] == a).map(|r| r.tick).collect();
    assert_eq!(applied.len(), 1, "applied once");
    assert!(applied[0] >= t && applied[0] <= t + 1, "seen at {t}, applied at {}", applied[0]);
    let comfort = read_channels(&sdir.join(FEEDBACK_DIR)).unwrap();
    assert_eq!(comfort.get(Modality::ComfortRating).unwrap().values, vec![0.75]);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn abrupt_disconnect_closes_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(config(&dir, 20.0, 20.0)).await.unwrap();
    let id = h.gateway.start_session(&opts(Some(1))).unwrap();
    let mut ws = connect(h.addr, &id).await;
    let mut last = None;
    next(&mut ws, &mut last).await.unwrap();
    drop(ws);
    let rec = tokio::time::timeout(Duration::from_secs(5), h.gateway.wait_closed(&id)).await.unwrap().unwrap();
    assert_eq!(rec.status, SessionStatus::Disconnected);
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(&id).join(RECORD_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk["status"], "disconnected");
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn ten_real_seconds_at_twenty_hz() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(config(&dir, 20.0, 20.0)).await.unwrap();
    let id = h.gateway.start_session(&opts(None)).unwrap();
    tokio::time::sleep(Duration::from_secs(10)).await;
    let rec = h.gateway.close_session(&id, SessionStatus::Closed).await.unwrap();
    assert!(rec.ticks.abs_diff(200) <= 2, "{} ticks", rec.ticks);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn episode_end_finishes_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(config(&dir, 1000.0, 20.0)).await.unwrap();
    let id = h.gateway.start_session(&opts(None)).unwrap();
    let rec = tokio::time::timeout(Duration::from_secs(10), h.gateway.wait_closed(&id)).await.unwrap().unwrap();
    assert_eq!(rec.status, SessionStatus::Finished);
    assert_eq!(rec.ticks, 300);
    assert!(replay_session(&dir.path().join(&id)).unwrap().matches());
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn preferences_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(config(&dir, 200.0, 20.0)).await.unwrap();
    let id = h.gateway.start_session(&opts(None)).unwrap();
    let segs = loop {
        let s = h.gateway.segments(&id).await.unwrap();
        if s.len() >= 2 {
            break s;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    let base = format!("http://{}/sessions/{id}", h.addr);
    let (a, b) = (segs[0].clone(), segs[1].clone());
    let url = base.clone();
    let (pair, tie, same, dangling) = blocking(move || {
        let post = |body: Value| ureq::post(format!("{url}/preferences")).send_json(body);
        let pair: PreferencePair = post(json!({"a": a, "b": b, "choice": "a"})).unwrap().body_mut().read_json().unwrap();
        let tie: PreferencePair = post(json!({"a": b, "b": a, "choice": "tie"})).unwrap().body_mut().read_json().unwrap();
        let same = status_of(post(json!({"a": a, "b": a, "choice": "b"})));
        let dangling = status_of(post(json!({"a": a, "b": "elsewhere:0", "choice": "b"})));
        (pair, tie, same, dangling)
    })
    .await;
    assert_eq!(pair.source, PreferenceSource::HumanExplicit);
    assert_eq!(pair.label, PreferenceLabel::APreferred);
    assert_eq!(tie.label, PreferenceLabel::Tie);
    assert_eq!((same, dangling), (400, 400));

    let rec = h.gateway.close_session(&id, SessionStatus::Closed).await.unwrap();
    let stored = read_pairs(&dir.path().join(&id).join(PAIRS_FILE)).unwrap();
    assert_eq!(stored, vec![pair, tie]);
    assert_eq!(rec.preferences, stored);

    let (url, first) = (base.clone(), segs[0].clone());
    let (seg, late) = blocking(move || {
        let seg: EpisodeSegment = ureq::get(format!("{url}/segments/{first}")).call().unwrap().body_mut().read_json().unwrap();
        let late = status_of(ureq::post(format!("{url}/preferences")).send_json(json!({"a": "x:0", "b": "x:40", "choice": "a"})));
        (seg, late)
    })
    .await;
    assert_eq!(seg.id, segs[0]);
    assert_eq!(late, 409);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn restarted_gateway_knows_old_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(config(&dir, 1000.0, 20.0)).await.unwrap();
    let first = h.gateway.start_session(&opts(None)).unwrap();
    h.gateway.wait_closed(&first).await.unwrap();
    let old_seg = h.gateway.segments(&first).await.unwrap()[0].clone();
    h.shutdown().await;

    let h = serve(config(&dir, 200.0, 20.0)).await.unwrap();
    let second = h.gateway.start_session(&opts(None)).unwrap();
    assert_ne!(first, second);
    let new_seg = loop {
        if let Some(s) = h.gateway.segments(&second).await.unwrap().first() {
            break s.clone();
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    let pair = h.gateway.submit_preference(&second, &old_seg, &new_seg, PreferenceLabel::BPreferred).await.unwrap();
    assert_eq!(pair.a, old_seg);
    h.shutdown().await;
}
