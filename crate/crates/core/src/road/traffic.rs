//! Synthetic vehicle traffic: random junction-to-junction trips driven along
//! shortest routes at constant per-vehicle speed, sampled once per second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{NodeId, RoadNetwork, POSITION_SNAP_TOLERANCE};
use crate::error::{Error, Result};
use crate::geom::{self, Point};

pub type VehicleId = u32;

/// Per-vehicle speed range in m/s.
pub const SPEED_RANGE: (f64, f64) = (8.0, 15.0);

const MEAN_SPEED: f64 = (SPEED_RANGE.0 + SPEED_RANGE.1) / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub vehicle_id: VehicleId,
    pub position: Point,
    /// m/s
    pub speed: f64,
    /// Segment nodes still ahead, nearest first. The vehicle sits on the
    /// segment ending at `planned_path[0]`.
    pub planned_path: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub time_step: i64,
    pub vehicles: Vec<VehicleState>,
}

impl TraceFrame {
    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.vehicle_id)
            .ok()
            .map(|i| &self.vehicles[i])
    }
}

/// Route record as written to the companion route file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub vehicle_id: VehicleId,
    /// Spawn time; negative for vehicles already driving when the trace starts.
    pub depart_t: i64,
    pub node_ids: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Traffic {
    pub frames: Vec<TraceFrame>,
    pub routes: Vec<RouteRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    pub seed: u64,
    /// Number of emitted frames (seconds).
    pub duration: usize,
    /// Vehicle spawns per second.
    pub density: f64,
    /// Seconds simulated before the first frame so the trace starts in steady
    /// state. `None` picks twice the estimated mean trip time.
    pub burn_in: Option<usize>,
}

/// Emits `duration` frames of traffic on `map`.
pub fn generate_traffic(map: &RoadNetwork, seed: u64, duration: usize, density: f64) -> Result<Vec<TraceFrame>> {
    Ok(simulate_traffic(
        map,
        &TrafficParams {
            seed,
            duration,
            density,
            burn_in: None,
        },
    )?
    .frames)
}

/// Spawn rate that keeps roughly `target_active` vehicles on the road.
pub fn calibrate_density(map: &RoadNetwork, target_active: f64, seed: u64) -> f64 {
    target_active / mean_trip_seconds(map, seed)
}

fn mean_trip_seconds(map: &RoadNetwork, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a1b);
    let junctions = map.junctions();
    if junctions.len() < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..200 {
        let a = junctions[rng.gen_range(0..junctions.len())];
        let b = junctions[rng.gen_range(0..junctions.len())];
        if a == b {
            continue;
        }
        if let Some(route) = map.shortest_route(a, b) {
            total += map.route_length(&route).unwrap_or(0.0);
            count += 1;
        }
    }
    if count == 0 {
        return 1.0;
    }
    (total / count as f64 / MEAN_SPEED).max(1.0)
}

struct Active {
    id: VehicleId,
    route: Vec<NodeId>,
    // index into `route` of the next node ahead
    next: usize,
    pos: Point,
    speed: f64,
}

impl Active {
    fn state(&self) -> VehicleState {
        VehicleState {
            vehicle_id: self.id,
            position: self.pos,
            speed: self.speed,
            planned_path: self.route[self.next..].to_vec(),
        }
    }

    /// Drives one second. Returns false once the destination is reached.
    fn advance(&mut self, map: &RoadNetwork) -> bool {
        let mut budget = self.speed;
        loop {
            let target = map.position(self.route[self.next]).expect("route node exists");
            let gap = self.pos.dist(target);
            if budget < gap {
                self.pos = self.pos.lerp(target, budget / gap);
                return true;
            }
            budget -= gap;
            self.pos = target;
            self.next += 1;
            if self.next == self.route.len() {
                return false;
            }
        }
    }
}

pub fn simulate_traffic(map: &RoadNetwork, params: &TrafficParams) -> Result<Traffic> {
    if params.duration < 1 {
        return Err(Error::Parameter("traffic duration must be at least 1 s".into()));
    }
    if !(params.density >= 0.0) || !params.density.is_finite() {
        return Err(Error::Parameter(format!("density must be >= 0, got {}", params.density)));
    }
    let burn_in = params
        .burn_in
        .unwrap_or_else(|| (2.0 * mean_trip_seconds(map, params.seed)).ceil() as usize) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let junctions = map.junctions().to_vec();

    let mut active: Vec<Active> = Vec::new();
    let mut routes = Vec::new();
    let mut frames = Vec::with_capacity(params.duration);
    let mut next_id: VehicleId = 0;
    let mut spawn_budget = 0.0;

    for t in -burn_in..params.duration as i64 {
        spawn_budget += params.density;
        while spawn_budget >= 1.0 && junctions.len() >= 2 {
            spawn_budget -= 1.0;
            let origin = junctions[rng.gen_range(0..junctions.len())];
            let mut dest = origin;
            while dest == origin {
                dest = junctions[rng.gen_range(0..junctions.len())];
            }
            let speed = rng.gen_range(SPEED_RANGE.0..=SPEED_RANGE.1);
            let Some(route) = map.shortest_route(origin, dest) else {
                continue;
            };
            let id = next_id;
            next_id += 1;
            routes.push(RouteRecord {
                vehicle_id: id,
                depart_t: t,
                node_ids: route.clone(),
            });
            active.push(Active {
                id,
                pos: map.position(origin)?,
                route,
                next: 1,
                speed,
            });
        }
        if t >= 0 {
            frames.push(TraceFrame {
                time_step: t,
                vehicles: active.iter().map(Active::state).collect(),
            });
        }
        active.retain_mut(|v| v.advance(map));
    }

    // keep only routes of vehicles that appear in the emitted frames
    let mut seen = vec![false; next_id as usize];
    for f in &frames {
        for v in &f.vehicles {
            seen[v.vehicle_id as usize] = true;
        }
    }
    routes.retain(|r| seen[r.vehicle_id as usize]);

    Ok(Traffic { frames, routes })
}

/// The two segment nodes the vehicle reaches next; the destination is
/// repeated when it is the only node left.
pub fn next_two_segment_nodes(
    map: &RoadNetwork,
    v: &VehicleState,
) -> Result<(super::SegmentNode, super::SegmentNode)> {
    let Some(&first) = v.planned_path.first() else {
        return Err(Error::Consistency(format!(
            "vehicle {} has an empty planned path",
            v.vehicle_id
        )));
    };
    let second = v.planned_path.get(1).copied().unwrap_or(first);
    let head = map.position(first)?;
    let on_path = head.dist(v.position) <= POSITION_SNAP_TOLERANCE
        || map
            .neighbours(first)
            .filter_map(|n| map.position(n).ok())
            .any(|p| geom::dist_to_segment(v.position, p, head) <= POSITION_SNAP_TOLERANCE);
    if !on_path {
        return Err(Error::Consistency(format!(
            "vehicle {} at ({:.2}, {:.2}) is not on a segment leading to node {first}",
            v.vehicle_id, v.position.x, v.position.y
        )));
    }
    Ok((
        *map.node(first).expect("checked above"),
        *map.node(second).ok_or_else(|| Error::Lookup(format!("segment node {second} not in map")))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::generate_map;

    #[test]
    fn zero_density_gives_empty_frames() {
        let map = generate_map(1, 3, 3, 500.0, 0.2).unwrap();
        let frames = generate_traffic(&map, 4, 10, 0.0).unwrap();
        assert_eq!(frames.len(), 10);
        assert!(frames.iter().all(|f| f.vehicles.is_empty()));
        assert_eq!(frames[9].time_step, 9);
    }

    #[test]
    fn padding_repeats_destination() {
        let map = generate_map(1, 2, 2, 100.0, 0.0).unwrap();
        let v = VehicleState {
            vehicle_id: 1,
            position: Point::new(50.0, 0.0),
            speed: 10.0,
            planned_path: vec![1],
        };
        let (a, b) = next_two_segment_nodes(&map, &v).unwrap();
        assert_eq!((a.id, b.id), (1, 1));
    }

    #[test]
    fn off_path_vehicle_is_rejected() {
        let map = generate_map(1, 2, 2, 100.0, 0.0).unwrap();
        let v = VehicleState {
            vehicle_id: 1,
            position: Point::new(50.0, 30.0),
            speed: 10.0,
            planned_path: vec![1, 3],
        };
        assert!(matches!(next_two_segment_nodes(&map, &v), Err(Error::Consistency(_))));
    }
}
