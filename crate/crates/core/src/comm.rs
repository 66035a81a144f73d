//! Per-step communication graphs over vehicles.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::nn::Tensor;
use crate::road::{TraceFrame, VehicleId};

/// Radio range in metres.
pub const DEFAULT_COMM_RANGE: f64 = 800.0;

/// Width of a node feature row.
pub const FEATURE_DIM: usize = 7;

/// Unit-disk connectivity over a set of vehicle positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_ids: Vec<VehicleId>,
    positions: Vec<Point>,
    adjacency: Vec<bool>,
    neighbours: Vec<Vec<usize>>,
    index: HashMap<VehicleId, usize>,
}

impl Topology {
    /// Links every pair of vehicles at most `comm_range` metres apart. Nodes
    /// are ordered by vehicle id.
    pub fn from_positions(mut nodes: Vec<(VehicleId, Point)>, comm_range: f64) -> Result<Self> {
        if !(comm_range > 0.0) {
            return Err(Error::Parameter(format!("comm_range must be positive, got {comm_range}")));
        }
        nodes.sort_by_key(|&(id, _)| id);
        let n = nodes.len();
        let mut index = HashMap::with_capacity(n);
        for (i, &(id, _)) in nodes.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::Validation(format!("vehicle {id} appears twice")));
            }
        }
        let (node_ids, positions): (Vec<_>, Vec<_>) = nodes.into_iter().unzip();
        let mut adjacency = vec![false; n * n];
        let mut neighbours = vec![Vec::new(); n];
        let range_sq = comm_range * comm_range;
        for i in 0..n {
            for j in (i + 1)..n {
                if positions[i].dist_sq(positions[j]) <= range_sq {
                    adjacency[i * n + j] = true;
                    adjacency[j * n + i] = true;
                    neighbours[i].push(j);
                    neighbours[j].push(i);
                }
            }
        }
        Ok(Self {
            node_ids,
            positions,
            adjacency,
            neighbours,
            index,
        })
    }

    pub fn from_frame(frame: &TraceFrame, comm_range: f64) -> Result<Self> {
        Self::from_positions(
            frame.vehicles.iter().map(|v| (v.vehicle_id, v.position)).collect(),
            comm_range,
        )
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[VehicleId] {
        &self.node_ids
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.index.contains_key(&id)
    }

    pub(crate) fn require(&self, id: VehicleId) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::Lookup(format!("vehicle {id} is not in the communication graph")))
    }

    pub fn position(&self, id: VehicleId) -> Option<Point> {
        self.index_of(id).map(|i| self.positions[i])
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j]
    }

    pub fn are_linked(&self, a: VehicleId, b: VehicleId) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.adjacent(i, j),
            _ => false,
        }
    }

    /// Neighbour indices of node index `i`, ascending.
    pub fn neighbour_indices(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    pub fn neighbour_lists(&self) -> &[Vec<usize>] {
        &self.neighbours
    }

    pub fn neighbours_of(&self, id: VehicleId) -> Result<Vec<VehicleId>> {
        let i = self.require(id)?;
        Ok(self.neighbours[i].iter().map(|&j| self.node_ids[j]).collect())
    }

    /// Removes the links between node `i` and each of `others`.
    pub(crate) fn cut_links(&mut self, i: usize, others: &[usize]) {
        let n = self.len();
        for &j in others {
            if j == i || !self.adjacency[i * n + j] {
                continue;
            }
            self.adjacency[i * n + j] = false;
            self.adjacency[j * n + i] = false;
            self.neighbours[i].retain(|&k| k != j);
            self.neighbours[j].retain(|&k| k != i);
        }
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbours[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbours.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Feature normalisation shared by every graph of one map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScale {
    pub map_diagonal: f64,
    pub k_max: usize,
}

/// A communication graph seen from a packet holder routing towards a
/// destination.
#[derive(Debug, Clone)]
pub struct CommGraph {
    pub topology: Arc<Topology>,
    pub holder: VehicleId,
    pub destination: VehicleId,
    pub scale: FeatureScale,
}

impl CommGraph {
    pub fn new(
        topology: Arc<Topology>,
        holder: VehicleId,
        destination: VehicleId,
        scale: FeatureScale,
    ) -> Result<Self> {
        topology.require(holder)?;
        topology.require(destination)?;
        Ok(Self {
            topology,
            holder,
            destination,
            scale,
        })
    }

    pub fn node_ids(&self) -> &[VehicleId] {
        self.topology.node_ids()
    }

    /// Node features, one row of [`FEATURE_DIM`] per node:
    /// offset to destination (2), offset to holder (2), destination flag,
    /// holder flag, degree / k_max. Offsets are divided by the map diagonal.
    pub fn features(&self) -> Tensor {
        let topo = &*self.topology;
        let n = topo.len();
        let dest = topo.position(self.destination).expect("checked at construction");
        let holder = topo.position(self.holder).expect("checked at construction");
        let diag = self.scale.map_diagonal;
        let k = self.scale.k_max.max(1) as f64;
        let mut data = Vec::with_capacity(n * FEATURE_DIM);
        for i in 0..n {
            let p = topo.positions[i];
            let id = topo.node_ids[i];
            data.extend_from_slice(&[
                (p.x - dest.x) / diag,
                (p.y - dest.y) / diag,
                (p.x - holder.x) / diag,
                (p.y - holder.y) / diag,
                f64::from(u8::from(id == self.destination)),
                f64::from(u8::from(id == self.holder)),
                topo.degree(i) as f64 / k,
            ]);
        }
        Tensor::from_vec(n, FEATURE_DIM, data).expect("row layout matches")
    }
}

/// Builds the true communication graph of `frame`.
pub fn build_comm_graph(
    frame: &TraceFrame,
    comm_range: f64,
    scale: FeatureScale,
    destination: VehicleId,
    holder: VehicleId,
) -> Result<CommGraph> {
    let topology = Arc::new(Topology::from_frame(frame, comm_range)?);
    CommGraph::new(topology, holder, destination, scale)
}

/// Hop count from a source, or the unreachable marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hops {
    Reachable(u32),
    Unreachable,
}

impl Hops {
    pub fn finite(self) -> Option<u32> {
        match self {
            Hops::Reachable(h) => Some(h),
            Hops::Unreachable => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopDistances {
    pub source: VehicleId,
    topology: Arc<Topology>,
    dist: Vec<Hops>,
}

impl HopDistances {
    /// `None` when `id` is not a node of the graph.
    pub fn get(&self, id: VehicleId) -> Option<Hops> {
        self.topology.index_of(id).map(|i| self.dist[i])
    }

    pub fn by_index(&self) -> &[Hops] {
        &self.dist
    }
}

/// Unweighted BFS hop counts from `source`.
pub fn bfs_hops(topology: &Arc<Topology>, source: VehicleId) -> Result<HopDistances> {
    let s = topology.require(source)?;
    let dist = bfs_from_index(topology, s);
    Ok(HopDistances {
        source,
        topology: Arc::clone(topology),
        dist,
    })
}

pub(crate) fn bfs_from_index(topology: &Topology, s: usize) -> Vec<Hops> {
    let mut dist = vec![Hops::Unreachable; topology.len()];
    dist[s] = Hops::Reachable(0);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        let Hops::Reachable(du) = dist[u] else { unreachable!() };
        for &v in topology.neighbour_indices(u) {
            if dist[v] == Hops::Unreachable {
                dist[v] = Hops::Reachable(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Shortest hop count between two vehicles, if connected.
pub fn hop_distance(topology: &Topology, from: VehicleId, to: VehicleId) -> Option<u32> {
    let (s, t) = (topology.index_of(from)?, topology.index_of(to)?);
    bfs_from_index(topology, s)[t].finite()
}

/// Vehicles exactly two hops from `node`.
pub fn two_hop_set(topology: &Topology, node: VehicleId) -> Result<BTreeSet<VehicleId>> {
    let i = topology.require(node)?;
    Ok(two_hop_indices(topology, i)
        .into_iter()
        .map(|j| topology.node_ids()[j])
        .collect())
}

pub(crate) fn two_hop_indices(topology: &Topology, i: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for &j in topology.neighbour_indices(i) {
        for &k in topology.neighbour_indices(j) {
            if k != i && !topology.adjacent(i, k) {
                out.insert(k);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path4() -> Arc<Topology> {
        let nodes = (0..4).map(|i| (i as VehicleId, Point::new(500.0 * i as f64, 0.0))).collect();
        Arc::new(Topology::from_positions(nodes, 600.0).unwrap())
    }

    #[test]
    fn range_boundary() {
        let near = vec![(1, Point::new(0.0, 0.0)), (2, Point::new(799.0, 0.0))];
        assert!(Topology::from_positions(near, 800.0).unwrap().are_linked(1, 2));
        let far = vec![(1, Point::new(0.0, 0.0)), (2, Point::new(800.01, 0.0))];
        assert!(!Topology::from_positions(far, 800.0).unwrap().are_linked(1, 2));
    }

    #[test]
    fn bfs_on_path() {
        let t = path4();
        let d = bfs_hops(&t, 0).unwrap();
        assert_eq!(d.get(2), Some(Hops::Reachable(2)));
        assert_eq!(d.get(3), Some(Hops::Reachable(3)));
        assert_eq!(d.get(9), None);
    }

    #[test]
    fn unreachable_pair() {
        let t = Arc::new(
            Topology::from_positions(vec![(1, Point::new(0.0, 0.0)), (2, Point::new(5000.0, 0.0))], 800.0)
                .unwrap(),
        );
        assert_eq!(bfs_hops(&t, 1).unwrap().get(2), Some(Hops::Unreachable));
    }

    #[test]
    fn two_hops_on_path_and_star() {
        let t = path4();
        assert_eq!(two_hop_set(&t, 0).unwrap(), BTreeSet::from([2]));
        let star = Topology::from_positions(
            vec![
                (0, Point::new(0.0, 0.0)),
                (1, Point::new(700.0, 0.0)),
                (2, Point::new(-700.0, 0.0)),
                (3, Point::new(0.0, 700.0)),
            ],
            750.0,
        )
        .unwrap();
        assert!(two_hop_set(&star, 0).unwrap().is_empty());
    }

    #[test]
    fn features_are_role_aware() {
        let t = path4();
        let g = CommGraph::new(t, 1, 3, FeatureScale { map_diagonal: 3000.0, k_max: 8 }).unwrap();
        let f = g.features();
        assert_eq!(f.shape(), [4, FEATURE_DIM]);
        assert_eq!(f.row(3)[4], 1.0);
        assert_eq!(f.row(1)[5], 1.0);
        assert_eq!(f.row(3)[0], 0.0);
        assert_eq!(f.row(0)[6], 1.0 / 8.0);
    }

    #[test]
    fn missing_holder_is_lookup_error() {
        let t = path4();
        let scale = FeatureScale { map_diagonal: 1.0, k_max: 8 };
        assert!(matches!(CommGraph::new(t, 42, 0, scale), Err(Error::Lookup(_))));
    }
}
