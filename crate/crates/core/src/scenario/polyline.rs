//! Plain-text lane centerlines: one `x y` pair per line, blank lines separate
//! polylines, `#` starts a comment.

use std::path::Path;

use super::ScenarioError;
use crate::geom::Vec2;
use crate::sim::{Lane, LaneId, RoadGraph};

/// Endpoints closer than this are chained as successor lanes.
pub const CHAIN_TOLERANCE: f64 = 0.5;

pub fn parse_polylines(text: &str) -> Result<Vec<Vec<Vec2>>, ScenarioError> {
    let mut out = Vec::new();
    let mut cur: Vec<Vec2> = Vec::new();
    let mut errs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let parsed = match cols.as_slice() {
            [x, y] => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((x, y)) if x.is_finite() && y.is_finite() => cur.push(Vec2::new(x, y)),
            Some(_) => errs.push(format!("line {}: non-finite coordinate", n + 1)),
            None => errs.push(format!("line {}: expected two numbers, got {line:?}", n + 1)),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    for (i, p) in out.iter().enumerate() {
        if p.len() < 2 {
            errs.push(format!("polyline {i} has {} point(s), needs at least 2", p.len()));
        }
    }
    if out.is_empty() && errs.is_empty() {
        errs.push("no polylines found".into());
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(ScenarioError::Invalid(errs))
    }
}

/// One lane per polyline, ids in file order, chained where an end meets a start.
pub fn polylines_to_road(lines: Vec<Vec<Vec2>>, lane_width: f64, speed_limit: f64) -> RoadGraph {
    let mut lanes: Vec<Lane> = lines
        .into_iter()
        .enumerate()
        .map(|(i, centerline)| Lane {
            id: i as LaneId,
            centerline,
            width: lane_width,
            speed_limit,
            successors: Vec::new(),
        })
        .collect();
    let ends: Vec<(Vec2, Vec2)> = lanes
        .iter()
        .map(|l| (l.centerline[0], *l.centerline.last().expect("non-empty")))
        .collect();
    for (i, lane) in lanes.iter_mut().enumerate() {
        for (j, (start, _)) in ends.iter().enumerate() {
            if i != j && ends[i].1.distance(*start) <= CHAIN_TOLERANCE {
                lane.successors.push(j as LaneId);
            }
        }
    }
    RoadGraph {
        lanes,
        crosswalks: Vec::new(),
        spawn_points: Vec::new(),
    }
}

pub fn import_polylines(path: &Path, lane_width: f64, speed_limit: f64) -> Result<RoadGraph, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if !(lane_width > 0.0 && speed_limit > 0.0) {
        return Err(ScenarioError::Invalid(vec!["lane width and speed limit must be > 0".into()]));
    }
    Ok(polylines_to_road(parse_polylines(&text)?, lane_width, speed_limit))
}
