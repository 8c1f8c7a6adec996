//! Safety-event detection between consecutive world states.
//!
//! Every kind is reported on its rising edge: the condition holds in `next`
//! but did not hold in `prev`. A braking manoeuvre spanning many ticks is one
//! HardBrake event, not one per tick.

use serde::{Deserialize, Serialize};

use super::agent::{AgentId, AgentState};
use super::world::WorldState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Collision,
    NearMiss,
    HardBrake,
    AbruptAccel,
    RapidLaneChange,
    FailureToYield,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Collision,
        EventKind::NearMiss,
        EventKind::HardBrake,
        EventKind::AbruptAccel,
        EventKind::RapidLaneChange,
        EventKind::FailureToYield,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Collision => "Collision",
            EventKind::NearMiss => "NearMiss",
            EventKind::HardBrake => "HardBrake",
            EventKind::AbruptAccel => "AbruptAccel",
            EventKind::RapidLaneChange => "RapidLaneChange",
            EventKind::FailureToYield => "FailureToYield",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Counts toward the safety total (Collision + FailureToYield + NearMiss).
    pub fn is_safety_critical(self) -> bool {
        matches!(
            self,
            EventKind::Collision | EventKind::FailureToYield | EventKind::NearMiss
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingEvent {
    pub tick: u64,
    pub agent: AgentId,
    pub kind: EventKind,
    /// Collision: relative speed m/s. NearMiss: minimum time-to-collision s.
    /// HardBrake / AbruptAccel: |accel| m/s^2. RapidLaneChange: |lateral speed| m/s.
    /// FailureToYield: vehicle speed m/s.
    pub magnitude: f64,
    /// Other agent involved (Collision, NearMiss).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other: Option<AgentId>,
}

fn overlapping(a: &AgentState, b: &AgentState) -> bool {
    a.position().distance(b.position()) < a.radius + b.radius
}

/// Time until the discs of `a` and `b` touch at current velocities; infinite when opening.
pub fn time_to_collision(a: &AgentState, b: &AgentState) -> f64 {
    let rel = b.position() - a.position();
    let dist = rel.norm();
    let gap = dist - a.radius - b.radius;
    if gap <= 0.0 || dist == 0.0 {
        return 0.0;
    }
    let rel_v = b.velocity() - a.velocity();
    let closing = -rel.dot(rel_v) / dist;
    if closing > 1e-9 {
        gap / closing
    } else {
        f64::INFINITY
    }
}

fn min_ttc(world: &WorldState, agent: &AgentState) -> (f64, Option<AgentId>, bool) {
    let mut best = (f64::INFINITY, None);
    let mut contact = false;
    for other in world.agents.iter().filter(|o| o.id != agent.id) {
        if overlapping(agent, other) {
            contact = true;
            continue;
        }
        let t = time_to_collision(agent, other);
        if t < best.0 {
            best = (t, Some(other.id));
        }
    }
    (best.0, best.1, contact)
}

/// True when a pedestrian occupies a crosswalk within the yield distance ahead of
/// `agent` while it is faster than the yield speed and not decelerating.
pub(crate) fn failing_to_yield(world: &WorldState, agent: &AgentState) -> bool {
    let th = &world.config.thresholds;
    if !agent.kind.is_vehicle() || agent.speed <= th.yield_speed || agent.accel < 0.0 {
        return false;
    }
    occupied_crosswalk_ahead(world, agent, th.yield_distance).is_some()
}

/// Distance to the nearest crosswalk ahead (within `horizon`) that a pedestrian occupies.
pub(crate) fn occupied_crosswalk_ahead(
    world: &WorldState,
    agent: &AgentState,
    horizon: f64,
) -> Option<f64> {
    let lane = agent.lane?;
    world
        .road
        .crosswalks_ahead(lane, agent.s, horizon)
        .into_iter()
        .find(|(idx, _)| {
            world
                .agents
                .iter()
                .filter(|p| !p.kind.is_vehicle())
                .any(|p| world.road.on_crosswalk(*idx, p.position()))
        })
        .map(|(_, d)| d)
}

fn lateral_speed(world: &WorldState, a: &AgentState) -> f64 {
    match a.lane.and_then(|id| world.road.lane(id)) {
        Some(lane) => {
            let pr = lane.project(a.position());
            let dir = if a.reversing { -1.0 } else { 1.0 };
            dir * a.speed * (a.pose.heading - pr.heading).sin()
        }
        None => 0.0,
    }
}

/// Events emitted by the transition `prev -> next`, ordered by (agent id, kind).
pub fn detect_events(prev: &WorldState, next: &WorldState) -> Vec<DrivingEvent> {
    let th = &next.config.thresholds;
    let dt = next.dt;
    let tick = next.tick;
    let mut events = Vec::new();
    let mut push = |agent: AgentId, kind: EventKind, magnitude: f64, other: Option<AgentId>| {
        events.push(DrivingEvent {
            tick,
            agent,
            kind,
            magnitude,
            other,
        })
    };

    for (i, a) in next.agents.iter().enumerate() {
        for b in &next.agents[i + 1..] {
            if !overlapping(a, b) {
                continue;
            }
            let was = match (prev.agent(a.id), prev.agent(b.id)) {
                (Some(pa), Some(pb)) => overlapping(pa, pb),
                _ => false,
            };
            if !was {
                let rel = (b.velocity() - a.velocity()).norm();
                push(a.id, EventKind::Collision, rel, Some(b.id));
                push(b.id, EventKind::Collision, rel, Some(a.id));
            }
        }
    }

    for a in next.agents.iter().filter(|a| a.kind.is_vehicle()) {
        let Some(p) = prev.agent(a.id) else { continue };
        let accel = (a.speed - p.speed) / dt;

        let (ttc, other, contact) = min_ttc(next, a);
        if !contact && ttc < th.ttc {
            let (prev_ttc, _, prev_contact) = min_ttc(prev, p);
            if prev_contact || prev_ttc >= th.ttc {
                push(a.id, EventKind::NearMiss, ttc, other);
            }
        }
        if accel < -th.hard_brake && p.accel >= -th.hard_brake {
            push(a.id, EventKind::HardBrake, -accel, None);
        }
        if accel > th.abrupt_accel && p.accel <= th.abrupt_accel {
            push(a.id, EventKind::AbruptAccel, accel, None);
        }
        if let (Some(from), Some(to)) = (p.lane, a.lane) {
            let is_successor = next
                .road
                .lane(from)
                .is_some_and(|l| l.successors.contains(&to));
            let lat = lateral_speed(next, a);
            if from != to && !is_successor && lat.abs() > th.lateral_speed {
                push(a.id, EventKind::RapidLaneChange, lat.abs(), None);
            }
        }
        if failing_to_yield(next, a) && !failing_to_yield(prev, p) {
            push(a.id, EventKind::FailureToYield, a.speed, None);
        }
    }

    events.sort_by(|x, y| x.agent.cmp(&y.agent).then(x.kind.cmp(&y.kind)));
    events
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::agents::PedestrianScript;
    use crate::geom::Vec2;
    use crate::sim::testutil::car;
    use crate::sim::{step, Action, AgentKind, Crosswalk, Pose, RoadGraph, WorldConfig};

    fn world(agents: Vec<AgentState>) -> WorldState {
        WorldState::new(
            RoadGraph::straight(500.0, 1, 3.5, 15.0),
            WorldConfig::default(),
            agents,
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn hard_brake_reported_once_with_peak_magnitude() {
        // brake 0.75 * 8 m/s^2 = 6 m/s^2 against a 4 m/s^2 threshold
        let mut w = world(vec![car(0, 0.0, 0.0, 0.0, 12.0)]);
        let brake = BTreeMap::from([(AgentId(0), Action::new(0.0, 0.0, 0.75))]);
        let mut events = Vec::new();
        for _ in 0..10 {
            w = step(&w, &brake).unwrap();
            events.extend(w.events.clone());
        }
        let hb: Vec<_> = events.iter().filter(|e| e.kind == EventKind::HardBrake).collect();
        assert_eq!(hb.len(), 1);
        assert!((hb[0].magnitude - 6.0).abs() < 1e-9);
    }

    #[test]
    fn constant_speed_driving_is_quiet() {
        let mut w = world(vec![car(0, 0.0, 0.0, 0.0, 10.0)]);
        let idle = BTreeMap::from([(AgentId(0), Action::IDLE)]);
        for _ in 0..100 {
            w = step(&w, &idle).unwrap();
            assert!(w.events.is_empty());
        }
    }

    #[test]
    fn overlap_yields_symmetric_collision() {
        let prev = world(vec![car(0, 0.0, 0.0, 0.0, 0.0), car(1, 3.0, 0.0, 0.0, 0.0)]);
        let mut next = prev.clone();
        next.tick = 1;
        next.agents[1].pose.x = 1.5;
        let ev = detect_events(&prev, &next);
        let coll: Vec<_> = ev.iter().filter(|e| e.kind == EventKind::Collision).collect();
        assert_eq!(coll.len(), 2);
        assert_eq!(coll[0].agent, AgentId(0));
        assert_eq!(coll[1].agent, AgentId(1));
        assert_eq!(coll[0].other, Some(AgentId(1)));
    }

    #[test]
    fn closing_gap_reports_near_miss_with_ttc() {
        // gap 3 m, closing 10 m/s -> ttc 0.3 s
        let prev = world(vec![car(0, 0.0, 0.0, 0.0, 10.0), car(1, 30.0, 0.0, 0.0, 0.0)]);
        let mut next = prev.clone();
        next.tick = 1;
        next.agents[0].pose.x = 25.0;
        let ev = detect_events(&prev, &next);
        let nm = ev.iter().find(|e| e.kind == EventKind::NearMiss).unwrap();
        assert_eq!(nm.agent, AgentId(0));
        assert!((nm.magnitude - 0.3).abs() < 1e-9);
    }

    fn crossing_world(ped_start: u64) -> WorldState {
        let mut road = RoadGraph::straight(200.0, 1, 3.5, 15.0);
        road.crosswalks.push(Crosswalk {
            lane: 0,
            s: 25.0,
            width: 3.0,
        });
        let ped = AgentState {
            id: AgentId(9),
            kind: AgentKind::Pedestrian,
            pose: Pose::default(),
            speed: 0.0,
            wheelbase: None,
            radius: 0.4,
            lane: None,
            s: 0.0,
            reversing: false,
            accel: 0.0,
            yaw_rate: 0.0,
        };
        let script = PedestrianScript {
            path: vec![Vec2::new(25.0, -3.0), Vec2::new(25.0, 3.0)],
            speed: 1.4,
            start_tick: ped_start,
        };
        WorldState::new(
            road,
            WorldConfig::default(),
            vec![car(0, 20.0, 0.0, 0.0, 8.0), ped],
            BTreeMap::from([(AgentId(9), script)]),
        )
        .unwrap()
    }

    #[test]
    fn pedestrian_on_crosswalk_ahead_triggers_failure_to_yield() {
        // pedestrian on the crosswalk 5 m ahead, ego 8 m/s, accel 0, d_yield 10, v_yield 2
        let prev = crossing_world(1000);
        let mut next = prev.clone();
        next.tick = 1;
        next.agents[1].pose = Pose::new(25.0, 0.0, std::f64::consts::FRAC_PI_2);
        assert!(failing_to_yield(&next, &next.agents[0]));
        let ev = detect_events(&prev, &next);
        let fty: Vec<_> = ev.iter().filter(|e| e.kind == EventKind::FailureToYield).collect();
        assert_eq!(fty.len(), 1);
        assert_eq!(fty[0].agent, AgentId(0));
    }

    #[test]
    fn decelerating_vehicle_is_yielding() {
        let mut w = crossing_world(0);
        w.agents[1].pose = Pose::new(25.0, 0.0, 0.0);
        w.agents[0].accel = -1.0;
        assert!(!failing_to_yield(&w, &w.agents[0]));
        w.agents[0].accel = 0.0;
        w.agents[0].speed = 1.5;
        assert!(!failing_to_yield(&w, &w.agents[0]));
    }

    #[test]
    fn rapid_lane_change_detected_on_lane_switch() {
        let road = RoadGraph::straight(500.0, 2, 3.5, 15.0);
        let prev = WorldState::new(
            road,
            WorldConfig::default(),
            vec![car(0, 10.0, 1.7, 0.3, 10.0)],
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(prev.agents[0].lane, Some(0));
        let next = step(&prev, &BTreeMap::from([(AgentId(0), Action::IDLE)])).unwrap();
        assert_eq!(next.agents[0].lane, Some(1));
        let rlc = next
            .events
            .iter()
            .find(|e| e.kind == EventKind::RapidLaneChange)
            .unwrap();
        assert!((rlc.magnitude - 10.0 * 0.3f64.sin()).abs() < 1e-9);
    }
}
