use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};

pub type NodeId = u32;

/// Longest straight segment allowed anywhere in a network, in metres.
pub const MAX_SEGMENT_LENGTH: f64 = 200.0;

/// Off-network tolerance used when validating externally supplied positions.
pub const POSITION_SNAP_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentNode {
    pub id: NodeId,
    pub position: Point,
}

/// Road graph made of segment nodes joined by straight segments.
///
/// Segments are stored once as `(from, to)` pairs; every road is drivable in
/// both directions.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<SegmentNode>,
    segments: Vec<(NodeId, NodeId)>,
    junctions: Vec<NodeId>,
    bounds: (f64, f64),
    index: HashMap<NodeId, usize>,
    // per node index: (neighbour node index, segment index)
    incident: Vec<Vec<(usize, usize)>>,
}

impl RoadNetwork {
    pub fn new(
        nodes: Vec<SegmentNode>,
        segments: Vec<(NodeId, NodeId)>,
        junctions: Vec<NodeId>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Validation("road network has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !n.position.is_finite() {
                return Err(Error::Validation(format!("node {} has a non-finite position", n.id)));
            }
            if n.position.x < 0.0 || n.position.y < 0.0 {
                return Err(Error::Validation(format!(
                    "node {} lies outside the map frame (negative coordinate)",
                    n.id
                )));
            }
            if index.insert(n.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate node id {}", n.id)));
            }
        }
        let mut incident = vec![Vec::new(); nodes.len()];
        for (s, &(a, b)) in segments.iter().enumerate() {
            let (ia, ib) = match (index.get(&a), index.get(&b)) {
                (Some(&ia), Some(&ib)) => (ia, ib),
                _ => {
                    return Err(Error::Validation(format!(
                        "segment {s} references a missing node ({a}, {b})"
                    )))
                }
            };
            let len = nodes[ia].position.dist(nodes[ib].position);
            if !(len > 0.0) {
                return Err(Error::Validation(format!("segment {s} ({a}, {b}) has zero length")));
            }
            if len > MAX_SEGMENT_LENGTH {
                return Err(Error::Validation(format!(
                    "segment {s} ({a}, {b}) is {len:.3} m long, above {MAX_SEGMENT_LENGTH} m"
                )));
            }
            incident[ia].push((ib, s));
            incident[ib].push((ia, s));
        }
        for j in &junctions {
            if !index.contains_key(j) {
                return Err(Error::Validation(format!("junction {j} is not a node")));
            }
        }
        let bounds = nodes.iter().fold((0.0f64, 0.0f64), |(w, h), n| {
            (w.max(n.position.x), h.max(n.position.y))
        });
        let net = Self {
            nodes,
            segments,
            junctions,
            bounds,
            index,
            incident,
        };
        if !net.is_connected() {
            return Err(Error::Validation("road network is not connected".into()));
        }
        Ok(net)
    }

    pub fn nodes(&self) -> &[SegmentNode] {
        &self.nodes
    }

    pub fn segments(&self) -> &[(NodeId, NodeId)] {
        &self.segments
    }

    pub fn junctions(&self) -> &[NodeId] {
        &self.junctions
    }

    /// Map extent `(width, height)`: the largest node coordinates.
    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds.0.hypot(self.bounds.1)
    }

    pub fn node(&self, id: NodeId) -> Option<&SegmentNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn position(&self, id: NodeId) -> Result<Point> {
        self.node(id)
            .map(|n| n.position)
            .ok_or_else(|| Error::Lookup(format!("segment node {id} not in map")))
    }

    pub fn neighbours(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let list = self.index.get(&id).map(|&i| self.incident[i].as_slice()).unwrap_or(&[]);
        list.iter().map(|&(j, _)| self.nodes[j].id)
    }

    pub fn are_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbours(a).any(|n| n == b)
    }

    pub fn segment_points(&self, s: usize) -> (Point, Point) {
        let (a, b) = self.segments[s];
        (self.nodes[self.index[&a]].position, self.nodes[self.index[&b]].position)
    }

    pub fn segment_length(&self, s: usize) -> f64 {
        let (a, b) = self.segment_points(s);
        a.dist(b)
    }

    pub fn mean_segment_length(&self) -> f64 {
        let total: f64 = (0..self.segments.len()).map(|s| self.segment_length(s)).sum();
        total / self.segments.len().max(1) as f64
    }

    /// Distance from `p` to the nearest segment, with that segment's index
    /// (lowest index on ties).
    pub fn distance_to_network(&self, p: Point) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for s in 0..self.segments.len() {
            let (a, b) = self.segment_points(s);
            let d = geom::project_onto_segment(p, a, b).dist_sq;
            if d < best.0 {
                best = (d, s);
            }
        }
        (best.0.sqrt(), best.1)
    }

    /// Length-weighted shortest route between two nodes, endpoints included.
    pub fn shortest_route(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        let src = *self.index.get(&from)?;
        let dst = *self.index.get(&to)?;
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(HeapItem { cost: 0.0, node: src });
        while let Some(HeapItem { cost, node }) = heap.pop() {
            if node == dst {
                break;
            }
            if cost > dist[node] {
                continue;
            }
            for &(next, s) in &self.incident[node] {
                let c = cost + self.segment_length(s);
                if c < dist[next] {
                    dist[next] = c;
                    prev[next] = node;
                    heap.push(HeapItem { cost: c, node: next });
                }
            }
        }
        if !dist[dst].is_finite() {
            return None;
        }
        let mut route = vec![self.nodes[dst].id];
        let mut cur = dst;
        while cur != src {
            cur = prev[cur];
            route.push(self.nodes[cur].id);
        }
        route.reverse();
        Some(route)
    }

    pub fn route_length(&self, route: &[NodeId]) -> Result<f64> {
        let mut total = 0.0;
        for w in route.windows(2) {
            total += self.position(w[0])?.dist(self.position(w[1])?);
        }
        Ok(total)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.incident[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.nodes.len()
    }

    pub fn to_file(&self) -> MapFile {
        MapFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| MapNode {
                    id: n.id,
                    x: n.position.x,
                    y: n.position.y,
                })
                .collect(),
            segments: self.segments.iter().map(|&(a, b)| [a, b]).collect(),
            junctions: self.junctions.clone(),
        }
    }

    pub fn from_file(file: MapFile) -> Result<Self> {
        let nodes = file
            .nodes
            .into_iter()
            .map(|n| SegmentNode {
                id: n.id,
                position: Point::new(n.x, n.y),
            })
            .collect();
        let segments = file.segments.into_iter().map(|[a, b]| (a, b)).collect();
        Self::new(nodes, segments, file.junctions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(serde_json::from_str(&text)?)
    }
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.segments == other.segments
            && self.junctions == other.junctions
    }
}

/// On-disk map layout: `{nodes:[{id,x,y}], segments:[[from,to]], junctions:[ids]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub nodes: Vec<MapNode>,
    pub segments: Vec<[NodeId; 2]>,
    pub junctions: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(PartialEq)]
struct HeapItem {
    cost: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
