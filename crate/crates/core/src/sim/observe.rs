//! Per-agent sensor view: the observation symbol of the learning problem.

use serde::{Deserialize, Serialize};

use super::agent::AgentId;
use super::events::{occupied_crosswalk_ahead, EventKind};
use super::world::{SensorConfig, WorldState};
use super::SimError;
use crate::geom::{normalize_angle, ray_disc, ray_segment, Vec2};

/// Smallest reported ray distance; keeps ray readings strictly positive.
pub const MIN_RAY: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub speed: f64,
    pub long_accel: f64,
    pub lat_accel: f64,
    pub heading_error: f64,
    pub lane_offset: f64,
    /// Ray `i` points at `heading - arc/2 + i * arc / rays`; with the defaults
    /// ray 8 of 16 points straight ahead.
    pub rays: Vec<f64>,
    /// Nearest agents in the ego frame: (dx forward, dy left, longitudinal speed difference).
    /// Slots without a sensed agent hold `(ray_max, 0, 0)`.
    pub nearest: Vec<[f64; 3]>,
    /// Distance along the road to the next occupied crosswalk; `ray_max` when none.
    pub crosswalk_distance: f64,
    /// Events of each [`EventKind`] this agent received on arrival at this tick.
    /// Reward features use the outcome form, see `EpisodeLog::outcome_observation`.
    pub event_counts: [f64; 6],
    /// Aligned feedback features; empty during pure rollout.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feedback: Vec<f64>,
}

impl Observation {
    /// Number of core (non-event, non-feedback) features for a sensor layout.
    pub fn core_len(sensor: &SensorConfig) -> usize {
        5 + sensor.rays + 3 * sensor.nearest_k + 1
    }

    /// Fixed-order scaled feature vector, without event counts or feedback:
    /// `[speed/15, long_accel/10, lat_accel/10, heading_error/pi, lane_offset/2,
    ///   rays/ray_max..., (dx/ray_max, dy/ray_max, dspeed/15)..., crosswalk/ray_max]`.
    pub fn core_features(&self, sensor: &SensorConfig) -> Vec<f64> {
        let rm = sensor.ray_max;
        let mut f = Vec::with_capacity(Self::core_len(sensor));
        f.push(self.speed / 15.0);
        f.push(self.long_accel / 10.0);
        f.push(self.lat_accel / 10.0);
        f.push(self.heading_error / std::f64::consts::PI);
        f.push(self.lane_offset / 2.0);
        f.extend(self.rays.iter().map(|r| r / rm));
        for n in &self.nearest {
            f.extend([n[0] / rm, n[1] / rm, n[2] / 15.0]);
        }
        f.push(self.crosswalk_distance / rm);
        f
    }

    pub fn is_finite(&self) -> bool {
        [
            self.speed,
            self.long_accel,
            self.lat_accel,
            self.heading_error,
            self.lane_offset,
            self.crosswalk_distance,
        ]
        .iter()
        .chain(&self.rays)
        .chain(self.nearest.iter().flatten())
        .chain(&self.event_counts)
        .chain(&self.feedback)
        .all(|v| v.is_finite())
    }
}

/// Distance along a ray to the road edge, skipping edges shared by adjacent lanes.
fn ray_road(world: &WorldState, origin: Vec2, dir: Vec2) -> Option<f64> {
    const TOL: f64 = 1e-6;
    let road = &world.road;
    let mut best: Option<f64> = None;
    for lane in &road.lanes {
        for (a, b) in lane.edge_segments() {
            let Some(t) = ray_segment(origin, dir, a, b) else { continue };
            if best.is_some_and(|b| t >= b) {
                continue;
            }
            let hit = origin + dir * t;
            let mut touching = 0;
            let mut interior = false;
            for l in &road.lanes {
                let pr = l.project(hit);
                if !pr.within {
                    continue;
                }
                let half = l.width / 2.0;
                if pr.d.abs() < half - TOL {
                    interior = true;
                    break;
                }
                if pr.d.abs() <= half + TOL {
                    touching += 1;
                }
            }
            if !interior && touching < 2 {
                best = Some(t);
            }
        }
    }
    best
}

/// Sensor view of agent `id`.
pub fn observe(world: &WorldState, id: AgentId) -> Result<Observation, SimError> {
    let me = world.agent(id).ok_or(SimError::UnknownAgent(id))?;
    let sensor = &world.config.sensor;
    let rm = sensor.ray_max;
    let origin = me.position();

    let (heading_error, lane_offset) = match me.lane.and_then(|l| world.road.lane(l)) {
        Some(lane) => {
            let pr = lane.project(origin);
            (normalize_angle(me.pose.heading - pr.heading), pr.d)
        }
        None => (0.0, 0.0),
    };

    let rays = (0..sensor.rays)
        .map(|i| {
            let angle = me.pose.heading - sensor.arc / 2.0 + i as f64 * sensor.arc / sensor.rays as f64;
            let dir = Vec2::from_angle(angle);
            let mut d = rm;
            for other in world.agents.iter().filter(|o| o.id != id) {
                if let Some(t) = ray_disc(origin, dir, other.position(), other.radius) {
                    d = d.min(t);
                }
            }
            if let Some(t) = ray_road(world, origin, dir) {
                d = d.min(t);
            }
            d.clamp(MIN_RAY, rm)
        })
        .collect();

    let mut others: Vec<(f64, &_)> = world
        .agents
        .iter()
        .filter(|o| o.id != id)
        .map(|o| (o.position().distance(origin), o))
        .filter(|(d, _)| *d < rm)
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    let my_v = me.velocity().to_frame(me.pose.heading).x;
    let mut nearest: Vec<[f64; 3]> = others
        .iter()
        .take(sensor.nearest_k)
        .map(|(_, o)| {
            let rel = (o.position() - origin).to_frame(me.pose.heading);
            let v = o.velocity().to_frame(me.pose.heading).x;
            [rel.x, rel.y, v - my_v]
        })
        .collect();
    nearest.resize(sensor.nearest_k, [rm, 0.0, 0.0]);

    let crosswalk_distance = if me.kind.is_vehicle() {
        occupied_crosswalk_ahead(world, me, rm).unwrap_or(rm)
    } else {
        rm
    };

    let mut event_counts = [0.0; 6];
    for e in world.events.iter().filter(|e| e.agent == id) {
        event_counts[EventKind::index(e.kind)] += 1.0;
    }

    Ok(Observation {
        speed: me.speed,
        long_accel: me.accel,
        lat_accel: me.speed * me.yaw_rate,
        heading_error,
        lane_offset,
        rays,
        nearest,
        crosswalk_distance,
        event_counts,
        feedback: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::agents::PedestrianScript;
    use crate::sim::testutil::car;
    use crate::sim::{AgentKind, AgentState, Crosswalk, Pose, RoadGraph, WorldConfig};

    #[test]
    fn empty_world_reads_max_range() {
        let w = WorldState::new(
            RoadGraph::default(),
            WorldConfig::default(),
            vec![car(0, 0.0, 0.0, 0.3, 5.0)],
            BTreeMap::new(),
        )
        .unwrap();
        let o = observe(&w, AgentId(0)).unwrap();
        assert_eq!(o.rays.len(), 16);
        assert!(o.rays.iter().all(|&r| r == 50.0));
        assert!(o.nearest.iter().all(|n| *n == [50.0, 0.0, 0.0]));
        assert_eq!(o.crosswalk_distance, 50.0);
        assert!(o.is_finite());
    }

    #[test]
    fn forward_ray_hits_disc_ahead() {
        // independent ray-circle oracle: first hit at center distance - radius
        let oracle = |dist: f64, r: f64| dist - r;
        let w = WorldState::new(
            RoadGraph::default(),
            WorldConfig::default(),
            vec![car(0, 0.0, 0.0, 0.0, 0.0), car(1, 10.0, 0.0, 0.0, 0.0)],
            BTreeMap::new(),
        )
        .unwrap();
        let o = observe(&w, AgentId(0)).unwrap();
        assert!((o.rays[8] - oracle(10.0, 1.0)).abs() < 1e-12);
        assert_eq!(o.rays[0], 50.0);
        assert_eq!(o.nearest[0], [10.0, 0.0, 0.0]);
    }

    #[test]
    fn side_rays_hit_outer_road_edges_only() {
        let w = WorldState::new(
            RoadGraph::straight(200.0, 2, 3.5, 15.0),
            WorldConfig::default(),
            vec![car(0, 50.0, 0.0, 0.0, 0.0)],
            BTreeMap::new(),
        )
        .unwrap();
        let o = observe(&w, AgentId(0)).unwrap();
        // ray 0 points right (-90 deg): edge of lane 0 at 1.75 m
        assert!((o.rays[0] - 1.75).abs() < 1e-9, "{}", o.rays[0]);
        // left: the boundary shared with lane 1 is transparent; outer edge at 5.25 m
        let mut w2 = w.clone();
        w2.agents[0].pose.heading = -std::f64::consts::FRAC_PI_2;
        let o2 = observe(&w2, AgentId(0)).unwrap();
        // heading -90 deg -> ray 0 points along -180 deg (backwards along the road): no edge
        assert_eq!(o2.rays[0], 50.0);
        // ray 8 points along heading (-y): right edge at 1.75 m
        assert!((o2.rays[8] - 1.75).abs() < 1e-9);
        let mut w3 = w.clone();
        w3.agents[0].pose.heading = std::f64::consts::FRAC_PI_2;
        let o3 = observe(&w3, AgentId(0)).unwrap();
        assert!((o3.rays[8] - 5.25).abs() < 1e-9, "{}", o3.rays[8]);
    }

    #[test]
    fn crosswalk_distance_is_arclength_to_occupied_crosswalk() {
        let mut road = RoadGraph::straight(200.0, 1, 3.5, 15.0);
        road.crosswalks.push(Crosswalk {
            lane: 0,
            s: 32.0,
            width: 3.0,
        });
        let ped = AgentState {
            id: AgentId(5),
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
            path: vec![Vec2::new(32.0, 0.5), Vec2::new(32.0, 6.0)],
            speed: 1.4,
            start_tick: 100,
        };
        let w = WorldState::new(
            road,
            WorldConfig::default(),
            vec![car(0, 20.0, 0.0, 0.0, 5.0), ped],
            BTreeMap::from([(AgentId(5), script)]),
        )
        .unwrap();
        let o = observe(&w, AgentId(0)).unwrap();
        // independent arclength oracle on a straight lane: crosswalk s - ego s
        assert!((o.crosswalk_distance - (32.0 - 20.0)).abs() < 1e-12);
    }

    #[test]
    fn unknown_agent_is_rejected() {
        let w = WorldState::new(
            RoadGraph::default(),
            WorldConfig::default(),
            vec![car(0, 0.0, 0.0, 0.0, 0.0)],
            BTreeMap::new(),
        )
        .unwrap();
        assert!(observe(&w, AgentId(3)).is_err());
    }
}
