//! Starts a gateway on loopback, drives the lead car of a car-following session
//! over the WebSocket for a few seconds, then lists what the session stored.

use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use hfdrive::sim::{Action, AgentId};
use hfdrive_gateway::{
    parse_message, replay_session, serve, Body, ComfortRating, ControlPayload, GatewayConfig, SessionCommand,
    SessionControl, SessionOptions, WireMessage,
};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

fn text(body: Body) -> Message {
    Message::Text(serde_json::to_string(&WireMessage::new(body)).unwrap().into())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = GatewayConfig::new(dir.path());
    cfg.bind = SocketAddr::from(([127, 0, 0, 1], 0));
    let handle = serve(cfg).await?;
    println!("gateway on {}", handle.addr);

    let id = handle.gateway.start_session(&SessionOptions {
        scenario: "car-following".into(),
        participant: "demo-01".into(),
        seed: Some(4),
        human_agent: Some(AgentId(1)),
    })?;
    let (mut ws, _) = connect_async(format!("ws://{}/sessions/{id}/ws", handle.addr)).await?;

    let mut last_tick = 0;
    let deadline = tokio::time::Instant::now() + Duration::from_secs(3);
    while tokio::time::Instant::now() < deadline {
        // brake gently for the first half, then accelerate
        let a = if last_tick < 30 { Action::new(0.0, 0.0, 0.2) } else { Action::new(0.0, 0.6, 0.0) };
        ws.send(text(Body::Control(ControlPayload::new(None, a)))).await?;
        if let Some(Ok(Message::Text(t))) = ws.next().await {
            if let Body::Snapshot(s) = parse_message(t.as_str())?.body {
                if s.tick / 10 != last_tick / 10 {
                    let lead = s.agents.iter().find(|a| a.id == AgentId(1)).unwrap();
                    println!("t={:>4.1}s  lead car {:>5.1} m/s", s.time, lead.speed);
                }
                last_tick = s.tick;
            }
        }
    }
    ws.send(text(Body::ComfortRating(ComfortRating { value: -0.4 }))).await?;
    ws.send(text(Body::SessionControl(SessionControl { command: SessionCommand::Close }))).await?;

    let rec = handle.gateway.wait_closed(&id).await?;
    println!("session {} {:?} after {} ticks", rec.id, rec.status, rec.ticks);
    for f in rec.files() {
        println!("  {f}");
    }
    let replay = replay_session(&dir.path().join(&id))?;
    println!("replay matches the log: {}", replay.matches());
    handle.shutdown().await;
    Ok(())
}
