//! Proactive knowledge exchange under partial observation.
//!
//! Every vehicle keeps a knowledge base of the last thing it heard about each
//! other vehicle. Once per second each vehicle refreshes its own entry; then
//! `f` synchronous broadcast rounds run, in which every vehicle merges the
//! pre-round bases of its radio neighbours, keeping the freshest entry per
//! vehicle. Information therefore travels `f` hops per second, so a vehicle
//! `d` hops away is seen `ceil(d / f) - 1` seconds late.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::comm::{hop_distance, Topology};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::road::{NodeId, RoadNetwork, TraceFrame, VehicleId, VehicleState};
use crate::traj::{Observation, Predictor};

/// Entries older than this many seconds are dropped.
pub const DEFAULT_EVICTION_AGE: i64 = 20;
/// Observations kept per known vehicle.
pub const HISTORY_LEN: usize = 5;
/// Broadcast rounds run before the first routing decision.
pub const WARM_UP_ROUNDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEntry {
    pub vehicle_id: VehicleId,
    pub last_position: Point,
    pub last_seen_t: i64,
    pub planned_path: Vec<NodeId>,
    /// Recent `(t, observation)` pairs, oldest first.
    pub history: Vec<(i64, Observation)>,
}

impl KnowledgeEntry {
    pub fn observations(&self) -> Vec<Observation> {
        self.history.iter().map(|&(_, o)| o).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub owner: VehicleId,
    pub entries: BTreeMap<VehicleId, Arc<KnowledgeEntry>>,
    pub clock: i64,
}

impl KnowledgeBase {
    pub fn new(owner: VehicleId, clock: i64) -> Self {
        Self {
            owner,
            entries: BTreeMap::new(),
            clock,
        }
    }

    /// Records the owner's own state at time `t` and drops entries older
    /// than `max_age`.
    pub fn observe_self(&mut self, v: &VehicleState, t: i64, max_age: i64) -> Result<()> {
        if v.vehicle_id != self.owner {
            return Err(Error::Consistency(format!(
                "base of {} cannot observe vehicle {} as itself",
                self.owner, v.vehicle_id
            )));
        }
        let obs = Observation::of(v)?;
        let mut history = self
            .entries
            .get(&self.owner)
            .map(|e| e.history.clone())
            .unwrap_or_default();
        if history.last().is_none_or(|&(last_t, _)| last_t < t) {
            history.push((t, obs));
        }
        if history.len() > HISTORY_LEN {
            history.drain(..history.len() - HISTORY_LEN);
        }
        self.entries.insert(
            self.owner,
            Arc::new(KnowledgeEntry {
                vehicle_id: self.owner,
                last_position: v.position,
                last_seen_t: t,
                planned_path: v.planned_path.clone(),
                history,
            }),
        );
        self.clock = t;
        self.entries.retain(|_, e| t - e.last_seen_t <= max_age);
        Ok(())
    }

    /// Freshest-wins union; ties keep the current entry.
    pub fn merge_from(&mut self, other: &BTreeMap<VehicleId, Arc<KnowledgeEntry>>) {
        for (id, entry) in other {
            match self.entries.get(id) {
                Some(mine) if mine.last_seen_t >= entry.last_seen_t => {}
                _ => {
                    self.entries.insert(*id, Arc::clone(entry));
                }
            }
        }
    }

    pub fn staleness(&self, id: VehicleId) -> Option<i64> {
        self.entries.get(&id).map(|e| self.clock - e.last_seen_t)
    }
}

pub type KnowledgeBases = BTreeMap<VehicleId, KnowledgeBase>;

/// One simulated second of knowledge exchange: every vehicle in `frame`
/// refreshes its own entry, then `rounds` synchronous merge rounds run over
/// the radio graph. Bases of vehicles absent from the frame are removed.
pub fn exchange_second(
    frame: &TraceFrame,
    bases: &mut KnowledgeBases,
    topology: &Topology,
    rounds: usize,
    max_age: i64,
) -> Result<()> {
    let t = frame.time_step;
    bases.retain(|id, _| frame.vehicle(*id).is_some());
    for v in &frame.vehicles {
        bases
            .entry(v.vehicle_id)
            .or_insert_with(|| KnowledgeBase::new(v.vehicle_id, t))
            .observe_self(v, t, max_age)?;
    }
    for _ in 0..rounds {
        let snapshot: Vec<(VehicleId, BTreeMap<VehicleId, Arc<KnowledgeEntry>>)> =
            bases.iter().map(|(&id, b)| (id, b.entries.clone())).collect();
        let lookup: BTreeMap<VehicleId, usize> = snapshot.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
        for (&id, base) in bases.iter_mut() {
            let i = topology
                .index_of(id)
                .ok_or_else(|| Error::Consistency(format!("vehicle {id} missing from the radio graph")))?;
            for &j in topology.neighbour_indices(i) {
                let other = topology.node_ids()[j];
                if let Some(&k) = lookup.get(&other) {
                    base.merge_from(&snapshot[k].1);
                }
            }
        }
    }
    Ok(())
}

/// Runs `f` broadcast rounds for second `t` of the trace.
pub fn broadcast_round(
    frame: &TraceFrame,
    bases: &mut KnowledgeBases,
    comm_range: f64,
    f: u32,
    t: i64,
) -> Result<()> {
    if frame.time_step != t {
        return Err(Error::Consistency(format!(
            "broadcast for t={t} given the frame of t={}",
            frame.time_step
        )));
    }
    if f == 0 {
        return Err(Error::Parameter("broadcast frequency must be at least 1".into()));
    }
    let topology = Topology::from_frame(frame, comm_range)?;
    exchange_second(frame, bases, &topology, f as usize, DEFAULT_EVICTION_AGE)
}

/// Seconds and round counts of a warm-up of `rounds` broadcast rounds at
/// frequency `f` that ends with the full second `t0`; only the first second
/// may run fewer than `f` rounds.
pub fn warm_up_schedule(t0: i64, f: u32, rounds: usize) -> Vec<(i64, usize)> {
    let f = f.max(1) as usize;
    let seconds = rounds.div_ceil(f).max(1);
    let first = rounds - f * (seconds - 1);
    (0..seconds)
        .map(|k| {
            let t = t0 - (seconds - 1 - k) as i64;
            (t, if k == 0 { first } else { f })
        })
        .collect()
}

/// Where the owner believes each known vehicle is at time `t`: fresh entries
/// as observed, stale ones rolled forward by the predictor for their age in
/// seconds (or left in place without a predictor).
pub fn estimated_positions(
    base: &KnowledgeBase,
    predictor: Option<&Predictor>,
    map: &RoadNetwork,
    t: i64,
) -> Result<Vec<(VehicleId, Point, i64)>> {
    let mut out = Vec::with_capacity(base.entries.len());
    for (&id, e) in &base.entries {
        let age = t - e.last_seen_t;
        if age < 0 {
            return Err(Error::Consistency(format!("entry for {id} is from the future")));
        }
        let p = match predictor {
            Some(pred) if age > 0 && !e.history.is_empty() => {
                pred.rollout(map, &e.observations(), &e.planned_path, age as usize)?
            }
            _ => e.last_position,
        };
        out.push((id, p, age));
    }
    Ok(out)
}

/// Radio graph over the owner's estimated positions. Vehicles the owner did
/// not hear from this second cannot be its direct neighbours, so their links
/// to the owner are cut even when a prediction lands within range.
pub fn estimated_topology(
    base: &KnowledgeBase,
    predictor: Option<&Predictor>,
    map: &RoadNetwork,
    comm_range: f64,
    t: i64,
) -> Result<Topology> {
    if base.entries.is_empty() {
        return Err(Error::Consistency(format!("knowledge base of {} is empty", base.owner)));
    }
    let est = estimated_positions(base, predictor, map, t)?;
    let mut topo = Topology::from_positions(est.iter().map(|&(id, p, _)| (id, p)).collect(), comm_range)?;
    if let Some(owner) = topo.index_of(base.owner) {
        let stale: Vec<usize> = est
            .iter()
            .filter(|&&(_, _, age)| age > 0)
            .filter_map(|&(id, _, _)| topo.index_of(id))
            .collect();
        topo.cut_links(owner, &stale);
    }
    Ok(topo)
}

/// True iff `destination` is known and connected to `holder`.
pub fn reachability_check(topology: &Topology, holder: VehicleId, destination: VehicleId) -> bool {
    hop_distance(topology, holder, destination).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: i64, xs: &[f64]) -> TraceFrame {
        TraceFrame {
            time_step: t,
            vehicles: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| VehicleState {
                    vehicle_id: i as VehicleId,
                    position: Point::new(x, 0.0),
                    speed: 0.0,
                    planned_path: vec![0],
                })
                .collect(),
        }
    }

    #[test]
    fn chain_staleness_follows_hops() {
        let mut bases = KnowledgeBases::new();
        for t in 0..4 {
            broadcast_round(&frame(t, &[0.0, 700.0, 1400.0]), &mut bases, 800.0, 1, t).unwrap();
        }
        let a = &bases[&0];
        assert_eq!(a.staleness(1), Some(0));
        assert_eq!(a.staleness(2), Some(1));
    }

    #[test]
    fn isolated_vehicle_only_knows_itself() {
        let mut bases = KnowledgeBases::new();
        broadcast_round(&frame(0, &[0.0, 5000.0]), &mut bases, 800.0, 4, 0).unwrap();
        assert_eq!(bases[&0].entries.len(), 1);
    }

    #[test]
    fn warm_up_has_exact_round_count() {
        let s = warm_up_schedule(100, 4, 10);
        assert_eq!(s, vec![(98, 2), (99, 4), (100, 4)]);
        assert_eq!(warm_up_schedule(5, 1, 10).len(), 10);
    }
}
