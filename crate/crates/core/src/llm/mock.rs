use std::collections::BTreeMap;

use super::{PromptEnvelope, RoleTag};

/// Deterministic stand-in for a chat model: canned replies per role, or
/// simple rules over the `key=value` payload.
#[derive(Clone, Debug, Default)]
pub struct MockProvider {
    canned: BTreeMap<RoleTag, String>,
}

impl MockProvider {
    pub fn with_canned(mut self, role: RoleTag, reply: impl Into<String>) -> Self {
        self.canned.insert(role, reply.into());
        self
    }

    pub fn reply(&self, env: &PromptEnvelope) -> String {
        if let Some(c) = self.canned.get(&env.role) {
            return c.clone();
        }
        match env.role {
            RoleTag::PersonaDrive => drive_rule(&env.payload),
            RoleTag::CollisionRecovery => recovery_script(),
            RoleTag::GuideUser => guidance(&env.payload),
            RoleTag::InterpretFeedback => interpret(&env.payload),
        }
    }
}

fn field(payload: &str, key: &str) -> Option<f64> {
    payload
        .split_whitespace()
        .filter_map(|t| t.split_once('='))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

fn text_field<'a>(payload: &'a str, key: &str) -> Option<&'a str> {
    payload
        .split_whitespace()
        .filter_map(|t| t.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

fn drive_rule(payload: &str) -> String {
    let persona = text_field(payload, "persona").unwrap_or("normal");
    let (target, headway, steer_gain) = match persona {
        "aggressive" => (14.0, 0.8, 0.6),
        "cautious" => (10.0, 2.2, 0.3),
        _ => (12.0, 1.5, 0.3),
    };
    let speed = field(payload, "speed").unwrap_or(0.0);
    let gap = field(payload, "lead_gap").unwrap_or(f64::INFINITY);
    let crosswalk = field(payload, "crosswalk").unwrap_or(f64::INFINITY);
    let offset = field(payload, "lane_offset").unwrap_or(0.0);
    let heading = field(payload, "heading_error").unwrap_or(0.0);
    let steer = (-(steer_gain * offset + heading)).clamp(-1.0, 1.0);
    let safe = 4.0 + speed * headway;
    let (throttle, brake) = if gap < safe || crosswalk < safe {
        (0.0, if gap < 0.5 * safe { 0.8 } else { 0.4 })
    } else if speed < target - 0.5 {
        (0.5, 0.0)
    } else if speed > target + 0.5 {
        (0.0, 0.1)
    } else {
        (0.1, 0.0)
    };
    format!("steer={steer:.3} throttle={throttle:.2} brake={brake:.2}")
}

fn recovery_script() -> String {
    let mut lines = vec!["steer=0.0 throttle=0.4 brake=0.0 reverse=1"; 30];
    lines.extend(["steer=0.5 throttle=0.3 brake=0.0 reverse=0"; 20]);
    lines.extend(["steer=0.0 throttle=0.0 brake=1.0 reverse=0"; 10]);
    lines.join("\n")
}

const TEMPLATES: [(&str, &str); 6] = [
    ("HardBrake", "You are braking hard often. Lift off the throttle earlier and brake gently over a longer distance."),
    ("AbruptAccel", "Your starts are abrupt. Press the throttle progressively instead of flooring it."),
    ("RapidLaneChange", "Lane changes are very quick. Check the mirror, signal, and steer smoothly across."),
    ("NearMiss", "You are getting close to other cars. Keep at least a two second gap to the car ahead."),
    ("Collision", "There were collisions. Slow down and leave more room; the car needs space to stop."),
    ("FailureToYield", "A pedestrian was waiting at the crosswalk. Slow down and stop before the crossing."),
];

fn guidance(payload: &str) -> String {
    let dominant = TEMPLATES
        .iter()
        .filter_map(|(k, t)| field(payload, k).filter(|n| *n > 0.0).map(|n| (n, *k, *t)))
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)));
    match dominant {
        Some((_, _, t)) => t.to_string(),
        None => "Welcome! Use the pedals gently, stay centered in your lane, and take a few laps to get a feel for the car.".to_string(),
    }
}

/// Reproduces the stress-ordering rule from a segment-pair summary.
fn interpret(payload: &str) -> String {
    let mut eps = 0.0;
    let mut scale = 1.0;
    let mut out = Vec::new();
    for line in payload.lines() {
        if let Some(e) = field(line, "tie_epsilon") {
            eps = e;
        }
        if let Some(s) = field(line, "confidence_scale") {
            scale = s;
        }
        let (Some(i), Some(a), Some(b)) = (
            text_field(line, "pair"),
            field(line, "stress_a"),
            field(line, "stress_b"),
        ) else {
            continue;
        };
        let d = a - b;
        let label = if d.abs() <= eps {
            "tie"
        } else if d < 0.0 {
            "A"
        } else {
            "B"
        };
        let conf = 1.0 / (1.0 + (-d.abs() / scale).exp());
        out.push(format!("pair={i} label={label} confidence={conf}"));
    }
    out.join("\n")
}
