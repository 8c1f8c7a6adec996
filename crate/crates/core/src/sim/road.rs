//! Road network: lanes with polyline centerlines, crosswalks and spawn points.

use serde::{Deserialize, Serialize};

use super::agent::{AgentKind, Pose};
use super::SimError;
use crate::geom::Vec2;

pub type LaneId = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    pub id: LaneId,
    /// Centerline in meters, at least two distinct consecutive points.
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub speed_limit: f64,
    #[serde(default)]
    pub successors: Vec<LaneId>,
}

/// Where a point lies relative to a lane centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneProjection {
    /// Arclength of the closest centerline point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel direction.
    pub d: f64,
    /// Centerline heading at `s`.
    pub heading: f64,
    /// False when the point projects beyond either end of the centerline.
    pub within: bool,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn project(&self, p: Vec2) -> LaneProjection {
        let n = self.centerline.len();
        let mut best = LaneProjection {
            s: 0.0,
            d: 0.0,
            heading: 0.0,
            within: false,
        };
        let mut best_dist = f64::INFINITY;
        let mut acc = 0.0;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let seg = b - a;
            let len = seg.norm();
            let dir = seg * (1.0 / len);
            let t_raw = (p - a).dot(dir) / len;
            let t = t_raw.clamp(0.0, 1.0);
            let q = a + seg * t;
            let dist = p.distance(q);
            if dist < best_dist - 1e-12 {
                best_dist = dist;
                let before_start = i == 0 && t_raw < 0.0;
                let after_end = i == n - 2 && t_raw > 1.0;
                best = LaneProjection {
                    s: acc + t * len,
                    d: dir.cross(p - a),
                    heading: dir.y.atan2(dir.x),
                    within: !before_start && !after_end,
                };
            }
            acc += len;
        }
        best
    }

    /// Point and heading on the centerline at arclength `s` (clamped to the lane).
    pub fn point_at(&self, s: f64) -> (Vec2, f64) {
        let mut remaining = s.max(0.0);
        let last = self.centerline.len() - 2;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if remaining <= len || i == last {
                let t = (remaining / len).min(1.0);
                return (w[0] + seg * t, seg.y.atan2(seg.x));
            }
            remaining -= len;
        }
        unreachable!("lane validated to have at least two points")
    }

    /// True when `p` lies on the lane strip (boundary inclusive within `tol`).
    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        let pr = self.project(p);
        pr.within && pr.d.abs() <= self.width / 2.0 + tol
    }

    /// Left and right edge segments of the lane strip.
    pub fn edge_segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let half = self.width / 2.0;
        self.centerline.windows(2).flat_map(move |w| {
            let dir = (w[1] - w[0]) * (1.0 / w[0].distance(w[1]));
            let n = dir.perp() * half;
            [(w[0] + n, w[1] + n), (w[0] - n, w[1] - n)]
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crosswalk {
    pub lane: LaneId,
    /// Longitudinal position of the crosswalk center along the lane, meters.
    pub s: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnPoint {
    pub pose: Pose,
    pub kind: AgentKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadGraph {
    #[serde(default)]
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub crosswalks: Vec<Crosswalk>,
    #[serde(default)]
    pub spawn_points: Vec<SpawnPoint>,
}

impl RoadGraph {
    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    /// Checks every structural invariant and reports all violations.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        for (i, lane) in self.lanes.iter().enumerate() {
            if self.lanes[..i].iter().any(|l| l.id == lane.id) {
                errors.push(format!("duplicate lane id {}", lane.id));
            }
            if !(lane.width > 0.0 && lane.width.is_finite()) {
                errors.push(format!("lane {}: width must be > 0", lane.id));
            }
            if !(lane.speed_limit > 0.0 && lane.speed_limit.is_finite()) {
                errors.push(format!("lane {}: speed limit must be > 0", lane.id));
            }
            if lane.centerline.len() < 2 {
                errors.push(format!("lane {}: centerline needs at least 2 points", lane.id));
            }
            if lane.centerline.iter().any(|p| !p.is_finite()) {
                errors.push(format!("lane {}: non-finite centerline point", lane.id));
            }
            if lane.centerline.windows(2).any(|w| w[0].distance(w[1]) < 1e-9) {
                errors.push(format!(
                    "lane {}: consecutive centerline points must be distinct",
                    lane.id
                ));
            }
            for succ in &lane.successors {
                if self.lane(*succ).is_none() {
                    errors.push(format!("lane {}: successor {} does not exist", lane.id, succ));
                }
            }
        }
        for (i, cw) in self.crosswalks.iter().enumerate() {
            match self.lane(cw.lane) {
                None => errors.push(format!("crosswalk {i}: lane {} does not exist", cw.lane)),
                Some(lane) if lane.centerline.len() >= 2 => {
                    if !(cw.s >= 0.0 && cw.s <= lane.length()) {
                        errors.push(format!(
                            "crosswalk {i}: position {} outside lane {} arclength",
                            cw.s, cw.lane
                        ));
                    }
                }
                Some(_) => {}
            }
            if !(cw.width > 0.0 && cw.width.is_finite()) {
                errors.push(format!("crosswalk {i}: width must be > 0"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn validated(self) -> Result<Self, SimError> {
        self.validate().map_err(|e| SimError::InvalidRoad(e.join("; ")))?;
        Ok(self)
    }

    /// Lane strip containing `p`, preferring `current` and then the smallest |offset|.
    pub fn locate(&self, p: Vec2, current: Option<LaneId>) -> Option<LaneId> {
        if let Some(lane) = current.and_then(|id| self.lane(id)) {
            if lane.contains(p, 0.0) {
                return Some(lane.id);
            }
        }
        self.lanes
            .iter()
            .filter_map(|l| {
                let pr = l.project(p);
                (pr.within && pr.d.abs() <= l.width / 2.0).then_some((pr.d.abs(), l.id))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }

    /// Crosswalks ahead of arclength `s` on `lane`, following first successors,
    /// with their distance along the road, up to `horizon` meters.
    pub fn crosswalks_ahead(&self, lane: LaneId, s: f64, horizon: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut offset = -s;
        let mut current = self.lane(lane);
        let mut visited = Vec::new();
        while let Some(l) = current {
            if visited.contains(&l.id) || offset > horizon {
                break;
            }
            visited.push(l.id);
            for (i, cw) in self.crosswalks.iter().enumerate() {
                if cw.lane == l.id {
                    let dist = offset + cw.s;
                    if dist > 0.0 && dist <= horizon {
                        out.push((i, dist));
                    }
                }
            }
            offset += l.length();
            current = l.successors.first().and_then(|id| self.lane(*id));
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        out
    }

    /// True when `p` is on the crosswalk area (within the crosswalk band and the lane width).
    pub fn on_crosswalk(&self, idx: usize, p: Vec2) -> bool {
        let cw = &self.crosswalks[idx];
        let Some(lane) = self.lane(cw.lane) else {
            return false;
        };
        let pr = lane.project(p);
        (pr.s - cw.s).abs() <= cw.width / 2.0 && pr.d.abs() <= lane.width / 2.0
    }

    /// A straight single-lane road along +x, handy for tests and examples.
    pub fn straight(length: f64, lanes: usize, width: f64, speed_limit: f64) -> Self {
        let lanes = (0..lanes)
            .map(|i| Lane {
                id: i as LaneId,
                centerline: vec![
                    Vec2::new(0.0, i as f64 * width),
                    Vec2::new(length, i as f64 * width),
                ],
                width,
                speed_limit,
                successors: Vec::new(),
            })
            .collect();
        RoadGraph {
            lanes,
            crosswalks: Vec::new(),
            spawn_points: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l_shaped() -> Lane {
        Lane {
            id: 0,
            centerline: vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)],
            width: 3.5,
            speed_limit: 10.0,
            successors: vec![],
        }
    }

    #[test]
    fn projection_reports_arclength_and_signed_offset() {
        let lane = l_shaped();
        let pr = lane.project(Vec2::new(4.0, 1.0));
        assert!((pr.s - 4.0).abs() < 1e-12);
        assert!((pr.d - 1.0).abs() < 1e-12);
        assert!(pr.within);
        let pr = lane.project(Vec2::new(11.0, 5.0));
        assert!((pr.s - 15.0).abs() < 1e-12);
        assert!((pr.d + 1.0).abs() < 1e-12);
        assert!(!lane.project(Vec2::new(-2.0, 0.0)).within);
        assert!(!lane.project(Vec2::new(10.0, 12.0)).within);
    }

    #[test]
    fn point_at_walks_the_polyline() {
        let lane = l_shaped();
        let (p, h) = lane.point_at(12.0);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
        assert!((h - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(lane.length(), 20.0);
    }

    #[test]
    fn validation_collects_every_violation() {
        let mut g = RoadGraph::straight(100.0, 1, 3.5, 10.0);
        g.lanes[0].width = 0.0;
        g.lanes[0].successors.push(9);
        g.crosswalks.push(Crosswalk {
            lane: 0,
            s: 150.0,
            width: 3.0,
        });
        let errs = g.validate().unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");

        let mut g = RoadGraph::straight(100.0, 1, 3.5, 10.0);
        g.lanes[0].centerline = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0)];
        assert!(g.validate().is_err());
        g.lanes[0].centerline = vec![Vec2::new(0.0, 0.0)];
        assert!(g.validate().is_err());
    }

    #[test]
    fn crosswalks_ahead_follow_successors() {
        let mut g = RoadGraph::straight(50.0, 1, 3.5, 10.0);
        g.lanes.push(Lane {
            id: 1,
            centerline: vec![Vec2::new(50.0, 0.0), Vec2::new(100.0, 0.0)],
            width: 3.5,
            speed_limit: 10.0,
            successors: vec![],
        });
        g.lanes[0].successors.push(1);
        g.crosswalks.push(Crosswalk {
            lane: 1,
            s: 10.0,
            width: 3.0,
        });
        g.crosswalks.push(Crosswalk {
            lane: 0,
            s: 5.0,
            width: 3.0,
        });
        let ahead = g.crosswalks_ahead(0, 20.0, 100.0);
        assert_eq!(ahead, vec![(0, 40.0)]);
    }
}
