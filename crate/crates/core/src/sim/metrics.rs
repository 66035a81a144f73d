use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_episode, sample_episodes, Episode, EpisodeConfig, EpisodeSpec, HopOutcome, Packet, World};
use crate::error::{Error, Result};
use crate::policy::RoutingPolicy;
use crate::road::VehicleId;

pub const RESULTS_HEADER: &str = "episode,src,dst,shortest,hops,outcome,spr,pspr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub src: VehicleId,
    pub dst: VehicleId,
    pub t0: i64,
    pub shortest: u32,
    pub hops: u32,
    pub delivered: bool,
    pub outcome: HopOutcome,
    /// Hops over shortest path, only for delivered packets.
    pub spr: Option<f64>,
    /// SPR when delivered, TTL over shortest path otherwise.
    pub pspr: f64,
    pub waits: u32,
}

impl EpisodeResult {
    pub(crate) fn new(spec: &EpisodeSpec, packet: &Packet, outcome: HopOutcome) -> Self {
        let delivered = outcome == HopOutcome::Delivered;
        let shortest = f64::from(packet.shortest_at_send.max(1));
        let spr = delivered.then(|| f64::from(packet.hops_used) / shortest);
        Self {
            src: spec.src,
            dst: spec.dst,
            t0: spec.t0,
            shortest: packet.shortest_at_send,
            hops: packet.hops_used,
            delivered,
            outcome,
            spr,
            pspr: spr.unwrap_or(f64::from(packet.ttl) / shortest),
            waits: packet.waits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub delivered: usize,
    /// Mean SPR over delivered packets; `None` if nothing was delivered.
    pub avg_spr: Option<f64>,
    pub avg_pspr: f64,
    pub rr: f64,
}

pub fn summarise(results: &[EpisodeResult]) -> Result<MetricsSummary> {
    if results.is_empty() {
        return Err(Error::Evaluation("no episodes to summarise".into()));
    }
    let n = results.len();
    let spr: Vec<f64> = results.iter().filter_map(|r| r.spr).collect();
    let delivered = spr.len();
    Ok(MetricsSummary {
        episodes: n,
        delivered,
        avg_spr: (delivered > 0).then(|| spr.iter().sum::<f64>() / delivered as f64),
        avg_pspr: results.iter().map(|r| r.pspr).sum::<f64>() / n as f64,
        rr: delivered as f64 / n as f64,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub results: Vec<EpisodeResult>,
    pub summary: MetricsSummary,
    pub skipped: usize,
    pub max_link_load: f64,
}

/// Runs `n` sampled episodes with `policy`, in parallel but with results in
/// sampling order.
pub fn evaluate(world: &World, policy: &dyn RoutingPolicy, n: usize, cfg: &EpisodeConfig, seed: u64) -> Result<Evaluation> {
    let specs = sample_episodes(world, n, cfg.ttl, 2, seed)?;
    evaluate_specs(world, policy, &specs, cfg)
}

/// Runs the given episodes in parallel, results in input order.
pub fn evaluate_specs(
    world: &World,
    policy: &dyn RoutingPolicy,
    specs: &[EpisodeSpec],
    cfg: &EpisodeConfig,
) -> Result<Evaluation> {
    let runs: Vec<Episode> = specs
        .par_iter()
        .map(|s| run_episode(world, s, policy, cfg))
        .collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(runs.len());
    let mut skipped = 0;
    let mut max_link_load = 0.0f64;
    for run in runs {
        match run {
            Episode::Ran(r) => {
                max_link_load = max_link_load.max(r.max_link_load);
                results.push(r.result);
            }
            Episode::Skipped { .. } => skipped += 1,
        }
    }
    if results.is_empty() {
        return Err(Error::Evaluation(format!(
            "all {} episodes in world `{}` were skipped",
            specs.len(),
            world.name
        )));
    }
    let summary = summarise(&results)?;
    Ok(Evaluation {
        results,
        summary,
        skipped,
        max_link_load,
    })
}

pub fn write_results_csv(path: &Path, results: &[EpisodeResult]) -> Result<()> {
    let mut out = String::with_capacity(64 * (results.len() + 1));
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for (i, r) in results.iter().enumerate() {
        let spr = r.spr.map(|s| format!("{s:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{i},{},{},{},{},{},{spr},{:.6}\n",
            r.src,
            r.dst,
            r.shortest,
            r.hops,
            r.outcome.as_str(),
            r.pspr
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(delivered: bool, hops: u32, shortest: u32) -> EpisodeResult {
        let spec = EpisodeSpec {
            src: 1,
            dst: 2,
            t0: 0,
            seed: 0,
        };
        let mut p = Packet::new(0, 1, 2, 20, 0.5, 0, shortest);
        p.hops_used = hops;
        let outcome = if delivered {
            HopOutcome::Delivered
        } else {
            HopOutcome::DroppedTtl
        };
        EpisodeResult::new(&spec, &p, outcome)
    }

    #[test]
    fn pspr_penalises_drops_with_ttl() {
        let s = summarise(&[result(true, 4, 2), result(false, 20, 4)]).unwrap();
        assert_eq!(s.avg_spr, Some(2.0));
        assert!((s.avg_pspr - (2.0 + 5.0) / 2.0).abs() < 1e-12);
        assert_eq!(s.rr, 0.5);
    }

    #[test]
    fn nothing_delivered_has_no_spr() {
        let s = summarise(&[result(false, 20, 4)]).unwrap();
        assert_eq!(s.avg_spr, None);
        assert_eq!(s.rr, 0.0);
    }
}
