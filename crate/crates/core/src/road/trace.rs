//! Trace CSV (`t,vehicle_id,x,y,speed`) and route JSON I/O.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::network::{RoadNetwork, POSITION_SNAP_TOLERANCE};
use super::traffic::{RouteRecord, TraceFrame, VehicleId, VehicleState};
use crate::error::{Error, Result};
use crate::geom::{self, Point};

pub const TRACE_HEADER: &str = "t,vehicle_id,x,y,speed";

/// Writes one row per vehicle per frame. Floats use the shortest exact
/// representation so a reload is bit-identical.
pub fn save_trace(path: &Path, frames: &[TraceFrame]) -> Result<()> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for f in frames {
        for v in &f.vehicles {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                f.time_step, v.vehicle_id, v.position.x, v.position.y, v.speed
            );
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_routes(path: &Path, routes: &[RouteRecord]) -> Result<()> {
    let text = serde_json::to_string(routes)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_routes(path: &Path) -> Result<Vec<RouteRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct Row {
    line: usize,
    t: i64,
    id: VehicleId,
    pos: Point,
    speed: f64,
}

fn parse_rows(text: &str) -> Result<Vec<Row>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, header)) if header.trim() == TRACE_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{TRACE_HEADER}`, found `{header}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T> {
            s.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("field `{name}` is not a number: `{s}`"),
            })
        }
        let x: f64 = num(fields[2], "x", line)?;
        let y: f64 = num(fields[3], "y", line)?;
        let speed: f64 = num(fields[4], "speed", line)?;
        if !x.is_finite() || !y.is_finite() || !speed.is_finite() || speed < 0.0 {
            return Err(Error::Parse {
                line,
                message: "position and speed must be finite, speed non-negative".into(),
            });
        }
        rows.push(Row {
            line,
            t: num(fields[0], "t", line)?,
            id: num(fields[1], "vehicle_id", line)?,
            pos: Point::new(x, y),
            speed,
        });
    }
    Ok(rows)
}

/// Loads a trace and rebuilds each vehicle's remaining planned path from its
/// route record.
pub fn load_trace(trace_path: &Path, routes_path: &Path, map: &RoadNetwork) -> Result<Vec<TraceFrame>> {
    let text = fs::read_to_string(trace_path).map_err(|e| Error::io(trace_path, e))?;
    let rows = parse_rows(&text)?;
    let routes: HashMap<VehicleId, RouteRecord> = if rows.is_empty() {
        HashMap::new()
    } else {
        load_routes(routes_path)?
            .into_iter()
            .map(|r| (r.vehicle_id, r))
            .collect()
    };
    frames_from_rows(rows, &routes, map)
}

fn frames_from_rows(
    mut rows: Vec<Row>,
    routes: &HashMap<VehicleId, RouteRecord>,
    map: &RoadNetwork,
) -> Result<Vec<TraceFrame>> {
    rows.sort_by_key(|r| (r.t, r.id));
    // route segment cursor per vehicle; progress along a route is monotone
    let mut cursors: HashMap<VehicleId, usize> = HashMap::new();
    let mut frames: BTreeMap<i64, Vec<VehicleState>> = BTreeMap::new();
    for row in rows {
        let route = routes.get(&row.id).ok_or_else(|| {
            Error::Validation(format!("line {}: vehicle {} has no route record", row.line, row.id))
        })?;
        if route.node_ids.len() < 2 {
            return Err(Error::Validation(format!(
                "route of vehicle {} has fewer than two nodes",
                row.id
            )));
        }
        let cursor = cursors.entry(row.id).or_insert(0);
        let seg = locate_on_route(map, &route.node_ids, *cursor, row.pos)?;
        let Some((seg, dist)) = seg else {
            unreachable!("route has at least one segment")
        };
        if dist > POSITION_SNAP_TOLERANCE {
            return Err(Error::Validation(format!(
                "line {}: vehicle {} at ({}, {}) is {dist:.3} m off its route",
                row.line, row.id, row.pos.x, row.pos.y
            )));
        }
        *cursor = seg;
        let list = frames.entry(row.t).or_default();
        if list.last().is_some_and(|v| v.vehicle_id == row.id) {
            return Err(Error::Validation(format!(
                "line {}: duplicate row for vehicle {} at t={}",
                row.line, row.id, row.t
            )));
        }
        list.push(VehicleState {
            vehicle_id: row.id,
            position: row.pos,
            speed: row.speed,
            planned_path: route.node_ids[seg + 1..].to_vec(),
        });
    }
    Ok(frames
        .into_iter()
        .map(|(time_step, vehicles)| TraceFrame { time_step, vehicles })
        .collect())
}

/// Nearest route segment at or after `from`, later segments winning ties, so
/// a vehicle standing exactly on a node is placed on the segment leaving it.
fn locate_on_route(
    map: &RoadNetwork,
    route: &[u32],
    from: usize,
    p: Point,
) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for s in from..route.len() - 1 {
        let a = map.position(route[s])?;
        let b = map.position(route[s + 1])?;
        let d = geom::dist_to_segment(p, a, b);
        if best.is_none_or(|(_, bd)| d <= bd) {
            best = Some((s, d));
        }
    }
    // a vehicle sitting on its final node has already arrived; never advance
    // past the last segment
    Ok(best)
}
