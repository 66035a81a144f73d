//! Greedy action-space pruning.
//!
//! A holder with more than `k_max` neighbours keeps a subset that still
//! reaches every two-hop neighbour, topped up to exactly `k_max` with the
//! best-connected of the discarded neighbours so that the retained-action
//! count is balanced across holders.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comm::{two_hop_indices, Topology};
use crate::error::{Error, Result};
use crate::road::{TraceFrame, VehicleId};

pub const DEFAULT_K_MAX: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedActionSet {
    pub holder_id: VehicleId,
    /// Kept neighbours in canonical order: greedy picks first, then top-up.
    pub retained: Vec<VehicleId>,
    /// Two-hop neighbours reachable through `retained`.
    pub covered_two_hop: BTreeSet<VehicleId>,
    /// Set when the greedy cover itself exceeded `k_max` and had to be cut.
    pub coverage_loss: bool,
}

impl PrunedActionSet {
    /// Every neighbour kept, in ascending id order, with no coverage work.
    pub fn unpruned(topology: &Topology, holder: VehicleId, cap: usize, seed: u64) -> Result<Self> {
        let h = topology.require(holder)?;
        let mut retained: Vec<VehicleId> = topology
            .neighbour_indices(h)
            .iter()
            .map(|&j| topology.node_ids()[j])
            .collect();
        if retained.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            retained.shuffle(&mut rng);
            retained.truncate(cap);
            retained.sort_unstable();
        }
        let covered_two_hop = covered_by(topology, h, &retained);
        Ok(Self {
            holder_id: holder,
            retained,
            covered_two_hop,
            coverage_loss: false,
        })
    }
}

fn covered_by(topology: &Topology, holder: usize, kept: &[VehicleId]) -> BTreeSet<VehicleId> {
    let two_hop = two_hop_indices(topology, holder);
    let mut out = BTreeSet::new();
    for &id in kept {
        let j = topology.index_of(id).expect("kept ids come from the topology");
        for &k in topology.neighbour_indices(j) {
            if two_hop.contains(&k) {
                out.insert(topology.node_ids()[k]);
            }
        }
    }
    out
}

/// Prunes the holder's action set down to at most `k_max` neighbours.
///
/// Neighbours are ranked by their number of links into the holder's two-hop
/// set (descending, ties by ascending id) and kept greedily while they reach
/// a not-yet-covered two-hop node. When the greedy cover already exceeds
/// `k_max`, a smallest cover is searched for among the ranked neighbours; if
/// none of size `k_max` or less exists, `k_max` greedy picks are drawn at
/// random with `seed`.
pub fn prune_actions(topology: &Topology, holder: VehicleId, k_max: usize, seed: u64) -> Result<PrunedActionSet> {
    if k_max == 0 {
        return Err(Error::Parameter("k_max must be at least 1".into()));
    }
    let h = topology.require(holder)?;
    let ids = topology.node_ids();
    let neighbours = topology.neighbour_indices(h);
    if neighbours.len() <= k_max {
        return PrunedActionSet::unpruned(topology, holder, k_max, seed);
    }

    let two_hop = two_hop_indices(topology, h);
    // per neighbour: indices (into `targets`) of two-hop nodes it reaches
    let targets: Vec<usize> = two_hop.iter().copied().collect();
    let reach: Vec<(usize, Vec<usize>)> = neighbours
        .iter()
        .map(|&j| {
            let covered = targets
                .iter()
                .enumerate()
                .filter(|&(_, &k)| topology.adjacent(j, k))
                .map(|(t, _)| t)
                .collect();
            (j, covered)
        })
        .collect();

    let mut ranked: Vec<&(usize, Vec<usize>)> = reach.iter().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(ids[a.0].cmp(&ids[b.0])));

    let mut covered = vec![false; targets.len()];
    let mut greedy: Vec<usize> = Vec::new();
    for (rank, (_, reaches)) in ranked.iter().enumerate() {
        if reaches.iter().any(|&t| !covered[t]) {
            for &t in reaches {
                covered[t] = true;
            }
            greedy.push(rank);
        }
    }

    let mut coverage_loss = false;
    if greedy.len() > k_max {
        let masks: Vec<u128> = ranked.iter().map(|(_, r)| to_mask(r)).collect();
        match (targets.len() <= 128)
            .then(|| small_cover(&masks, full_mask(targets.len()), k_max))
            .flatten()
        {
            Some(cover) => greedy = cover,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picks = greedy.clone();
                picks.shuffle(&mut rng);
                picks.truncate(k_max);
                picks.sort_unstable();
                greedy = picks;
                coverage_loss = true;
            }
        }
    }

    // top up with the best-ranked leftovers
    let mut kept = greedy.clone();
    for rank in 0..ranked.len() {
        if kept.len() >= k_max {
            break;
        }
        if !greedy.contains(&rank) {
            kept.push(rank);
        }
    }
    let retained: Vec<VehicleId> = kept.iter().map(|&r| ids[ranked[r].0]).collect();
    let covered_two_hop = covered_by(topology, h, &retained);
    Ok(PrunedActionSet {
        holder_id: holder,
        retained,
        covered_two_hop,
        coverage_loss,
    })
}

fn to_mask(targets: &[usize]) -> u128 {
    targets.iter().filter(|&&t| t < 128).fold(0u128, |m, &t| m | (1u128 << t))
}

fn full_mask(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

/// Depth-first search for the smallest cover of `goal` using at most `limit`
/// candidate masks. Each level branches on the candidates hitting the lowest
/// uncovered target. Bounded work: gives up after a fixed number of
/// expansions and returns the best cover found so far.
fn small_cover(masks: &[u128], goal: u128, limit: usize) -> Option<Vec<usize>> {
    const BUDGET: usize = 200_000;
    struct Search<'a> {
        masks: &'a [u128],
        goal: u128,
        best: Option<Vec<usize>>,
        expansions: usize,
    }
    impl Search<'_> {
        fn go(&mut self, have: u128, picked: &mut Vec<usize>, limit: usize) {
            if have & self.goal == self.goal {
                if self.best.as_ref().is_none_or(|b| picked.len() < b.len()) {
                    let mut found = picked.clone();
                    found.sort_unstable();
                    self.best = Some(found);
                }
                return;
            }
            let cap = self.best.as_ref().map_or(limit, |b| b.len() - 1);
            if picked.len() >= cap || self.expansions >= BUDGET {
                return;
            }
            let first = (self.goal & !have).trailing_zeros();
            for i in 0..self.masks.len() {
                if self.masks[i] >> first & 1 == 0 || picked.contains(&i) {
                    continue;
                }
                self.expansions += 1;
                picked.push(i);
                self.go(have | self.masks[i], picked, limit);
                picked.pop();
            }
        }
    }
    if masks.iter().fold(0u128, |a, &m| a | m) & goal != goal {
        return None;
    }
    let mut s = Search {
        masks,
        goal,
        best: None,
        expansions: 0,
    };
    s.go(0, &mut Vec::new(), limit);
    s.best
}

pub type DegreeHistogram = BTreeMap<usize, usize>;

/// Node-degree histograms over every vehicle of every frame, before and after
/// pruning.
pub fn degree_histogram(
    frames: &[TraceFrame],
    comm_range: f64,
    k_max: usize,
) -> Result<(DegreeHistogram, DegreeHistogram)> {
    if frames.is_empty() {
        return Err(Error::Parameter("degree histogram needs at least one frame".into()));
    }
    let mut before = DegreeHistogram::new();
    let mut after = DegreeHistogram::new();
    for frame in frames {
        let topo = Topology::from_frame(frame, comm_range)?;
        for (i, &id) in topo.node_ids().iter().enumerate() {
            *before.entry(topo.degree(i)).or_default() += 1;
            let kept = prune_actions(&topo, id, k_max, frame.time_step as u64)?;
            *after.entry(kept.retained.len()).or_default() += 1;
        }
    }
    Ok((before, after))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    fn complete(n: usize) -> Topology {
        let nodes = (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                (i as VehicleId, Point::new(100.0 * a.cos(), 100.0 * a.sin()))
            })
            .collect();
        Topology::from_positions(nodes, 1000.0).unwrap()
    }

    #[test]
    fn small_degree_is_untouched() {
        let t = complete(4);
        let p = prune_actions(&t, 0, 8, 0).unwrap();
        assert_eq!(p.retained, vec![1, 2, 3]);
    }

    #[test]
    fn clique_is_capped() {
        let t = complete(12);
        let p = prune_actions(&t, 0, 8, 0).unwrap();
        assert_eq!(p.retained.len(), 8);
        assert!(p.covered_two_hop.is_empty());
        // no two-hop nodes: greedy keeps nothing, top-up fills by ascending id
        assert_eq!(p.retained, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn zero_k_is_rejected() {
        assert!(prune_actions(&complete(3), 0, 0, 0).is_err());
    }

    #[test]
    fn cover_search_finds_minimum() {
        // targets 0..4; best is {1, 2}
        let masks = [0b0001, 0b0011, 0b1100, 0b0100, 0b1000];
        assert_eq!(small_cover(&masks, 0b1111, 3), Some(vec![1, 2]));
        assert_eq!(small_cover(&masks, 0b1111, 1), None);
    }
}
