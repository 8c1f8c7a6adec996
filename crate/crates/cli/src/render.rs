use std::fmt::Write;

use hfdrive::sim::{AgentState, EpisodeLog};

fn agent_line(a: &AgentState) -> String {
    format!("{}:({:.2},{:.2}) v={:.2}", a.id, a.pose.x, a.pose.y, a.speed)
}

pub fn render_summary(log: &EpisodeLog) -> String {
    let h = &log.header;
    let mut s = String::new();
    let _ = writeln!(s, "episode {} (scenario {}, seed {})", h.episode_id, h.scenario, h.seed);
    let _ = writeln!(
        s,
        "{} ticks, {:.2} s at dt {}, ended by {:?}",
        log.ticks.len(),
        log.duration(),
        h.dt,
        log.footer.termination
    );
    for info in &h.agents {
        let fin = log.footer.final_state.agents.iter().find(|a| a.id == info.id);
        let counts = log.event_counts(info.id);
        let events: Vec<String> = counts.iter().map(|(k, n)| format!("{}x{n}", k.name())).collect();
        let _ = writeln!(
            s,
            "  agent {} {:?} [{}] final {} events {}",
            info.id,
            info.kind,
            info.controller,
            fin.map_or_else(|| "-".into(), agent_line),
            if events.is_empty() { "none".into() } else { events.join(" ") }
        );
    }
    s
}

/// One line per tick: agent positions and the events raised that tick.
pub fn render_stream(log: &EpisodeLog) -> String {
    let mut s = String::new();
    for rec in &log.ticks {
        let agents: Vec<String> = rec.agents.iter().map(agent_line).collect();
        let _ = write!(s, "t={:<5} {}", rec.tick, agents.join(" "));
        for e in &rec.events {
            let _ = write!(s, " !{}@{}({:.2})", e.kind.name(), e.agent, e.magnitude);
        }
        s.push('\n');
    }
    s
}
