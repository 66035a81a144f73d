//! Hop-by-hop routing episodes on the moving vehicle network, and the SPR,
//! PSPR and RR metrics.

mod episode;
mod metrics;
mod world;

pub use episode::{
    run_episode, sample_episodes, step_packet, Episode, EpisodeConfig, EpisodeRun, EpisodeSpec, HopStep,
};
pub use metrics::{evaluate, evaluate_specs, summarise, write_results_csv, EpisodeResult, Evaluation, MetricsSummary, RESULTS_HEADER};
pub use world::World;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::road::VehicleId;

/// Hop budget per packet.
pub const DEFAULT_TTL: u32 = 20;
/// Per-step capacity of a link in congestion mode.
pub const LINK_CAPACITY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationMode {
    /// Routing on the true graph.
    Complete,
    /// Routing on each holder's estimated graph, knowledge broadcast `f`
    /// times per second.
    Partial { f: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CongestionMode {
    NoCongestion,
    Congestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HopOutcome {
    Relayed,
    Delivered,
    DroppedTtl,
    DroppedUnreachable,
    DroppedHolderLost,
    CongestionWait,
    /// The holder has no neighbour to relay to and keeps the packet.
    Stranded,
}

impl HopOutcome {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            HopOutcome::Delivered
                | HopOutcome::DroppedTtl
                | HopOutcome::DroppedUnreachable
                | HopOutcome::DroppedHolderLost
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HopOutcome::Relayed => "RELAYED",
            HopOutcome::Delivered => "DELIVERED",
            HopOutcome::DroppedTtl => "DROPPED_TTL",
            HopOutcome::DroppedUnreachable => "DROPPED_UNREACHABLE",
            HopOutcome::DroppedHolderLost => "DROPPED_HOLDER_LOST",
            HopOutcome::CongestionWait => "CONGESTION_WAIT",
            HopOutcome::Stranded => "STRANDED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub packet_id: u64,
    pub source: VehicleId,
    pub destination: VehicleId,
    pub holder: VehicleId,
    pub hops_used: u32,
    pub ttl: u32,
    /// In `(0, 1]`; only matters in congestion mode.
    pub size: f64,
    pub created_t: i64,
    pub shortest_at_send: u32,
    /// Hops spent waiting for link capacity or for a neighbour.
    pub waits: u32,
}

impl Packet {
    pub fn new(
        packet_id: u64,
        source: VehicleId,
        destination: VehicleId,
        ttl: u32,
        size: f64,
        created_t: i64,
        shortest_at_send: u32,
    ) -> Self {
        Self {
            packet_id,
            source,
            destination,
            holder: source,
            hops_used: 0,
            ttl,
            size,
            created_t,
            shortest_at_send,
            waits: 0,
        }
    }
}

/// Size booked on each undirected link during the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkLoad {
    pub capacity: f64,
    booked: HashMap<(VehicleId, VehicleId), f64>,
}

impl Default for LinkLoad {
    fn default() -> Self {
        Self::new(LINK_CAPACITY)
    }
}

impl LinkLoad {
    pub fn new(capacity: f64) -> Self {
        Self {
            capacity,
            booked: HashMap::new(),
        }
    }

    fn key(a: VehicleId, b: VehicleId) -> (VehicleId, VehicleId) {
        (a.min(b), a.max(b))
    }

    pub fn booked(&self, a: VehicleId, b: VehicleId) -> f64 {
        self.booked.get(&Self::key(a, b)).copied().unwrap_or(0.0)
    }

    /// Books `size` on the link if it fits in the residual capacity.
    pub fn try_book(&mut self, a: VehicleId, b: VehicleId, size: f64) -> bool {
        let slot = self.booked.entry(Self::key(a, b)).or_insert(0.0);
        if self.capacity - *slot < size {
            return false;
        }
        *slot += size;
        true
    }

    pub fn max_booked(&self) -> f64 {
        self.booked.values().copied().fold(0.0, f64::max)
    }

    /// Clears all bookings at the start of a new step.
    pub fn reset(&mut self) {
        self.booked.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_large_packet_waits() {
        let mut load = LinkLoad::default();
        assert!(load.try_book(1, 2, 0.6));
        assert!(!load.try_book(2, 1, 0.6));
        assert!(load.try_book(2, 1, 0.4));
        assert!(load.max_booked() <= 1.0 + 1e-12);
        load.reset();
        assert_eq!(load.booked(1, 2), 0.0);
    }
}
