use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CongestionMode, EpisodeResult, HopOutcome, LinkLoad, ObservationMode, Packet, World};
use crate::comm::{hop_distance, CommGraph, FeatureScale, Topology};
use crate::dqn::{compute_reward, Experience, RewardConfig};
use crate::error::{Error, Result};
use crate::obs::{self, KnowledgeBases, DEFAULT_EVICTION_AGE};
use crate::policy::{PolicyState, RoutingPolicy};
use crate::road::VehicleId;
use crate::traj::Predictor;

/// Seconds of trace kept free before every episode start, enough for a
/// ten-round warm-up at one broadcast per second.
const LEAD_IN: i64 = 10;

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub ttl: u32,
    pub observation: ObservationMode,
    pub congestion: CongestionMode,
    /// Seconds between radio-graph recomputations; 1 recomputes every step.
    pub graph_every: usize,
    /// Extra packets circulating in congestion mode.
    pub background_packets: usize,
    pub warm_up_rounds: usize,
    /// Trajectory predictor for partial observation; `None` keeps stale
    /// positions as they were last heard.
    pub predictor: Option<Arc<Predictor>>,
    pub rewards: RewardConfig,
    pub record_experience: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            ttl: super::DEFAULT_TTL,
            observation: ObservationMode::Complete,
            congestion: CongestionMode::NoCongestion,
            graph_every: 1,
            background_packets: 8,
            warm_up_rounds: obs::WARM_UP_ROUNDS,
            predictor: None,
            rewards: RewardConfig::default(),
            record_experience: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub src: VehicleId,
    pub dst: VehicleId,
    pub t0: i64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub experiences: Vec<Experience>,
    /// Largest size booked on any link in any step.
    pub max_link_load: f64,
}

#[derive(Debug, Clone)]
pub enum Episode {
    Ran(EpisodeRun),
    Skipped { reason: String },
}

#[derive(Debug, Clone)]
pub struct HopStep {
    pub outcome: HopOutcome,
    /// The state the policy was asked about, if it was asked.
    pub state: Option<PolicyState>,
    pub action_index: Option<usize>,
}

impl HopStep {
    fn plain(outcome: HopOutcome) -> Self {
        Self {
            outcome,
            state: None,
            action_index: None,
        }
    }
}

/// Moves a packet by one hop.
///
/// `world` is the radio graph the packet physically travels on; `decision`
/// is the graph the holder believes in (`None` when it has none). With
/// `require_reachable`, a destination the holder cannot reach on its own
/// graph causes a drop. `loads` enables the link-capacity check.
#[allow(clippy::too_many_arguments)]
pub fn step_packet(
    packet: &mut Packet,
    world: &Arc<Topology>,
    decision: Option<&Arc<Topology>>,
    require_reachable: bool,
    scale: FeatureScale,
    policy: &dyn RoutingPolicy,
    loads: Option<&mut LinkLoad>,
    seed: u64,
) -> Result<HopStep> {
    let holder = packet.holder;
    let dest = packet.destination;
    if !world.contains(holder) {
        return Ok(HopStep::plain(HopOutcome::DroppedHolderLost));
    }
    if !world.contains(dest) {
        return Ok(HopStep::plain(HopOutcome::DroppedUnreachable));
    }
    if world.are_linked(holder, dest) {
        packet.hops_used += 1;
        packet.holder = dest;
        return Ok(HopStep::plain(HopOutcome::Delivered));
    }
    let Some(decision) = decision else {
        return Ok(HopStep::plain(HopOutcome::DroppedUnreachable));
    };
    if !decision.contains(dest) || (require_reachable && !obs::reachability_check(decision, holder, dest)) {
        return Ok(HopStep::plain(HopOutcome::DroppedUnreachable));
    }
    let graph = CommGraph::new(Arc::clone(decision), holder, dest, scale)?;
    let state = PolicyState::new(graph, &policy.action_space(), seed)?;
    if state.pruned.retained.is_empty() {
        packet.hops_used += 1;
        packet.waits += 1;
        let outcome = if packet.hops_used >= packet.ttl {
            HopOutcome::DroppedTtl
        } else {
            HopOutcome::Stranded
        };
        return Ok(HopStep {
            outcome,
            state: None,
            action_index: None,
        });
    }
    let decided = policy.decide(&state, seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1))?;
    let next = decided.next_hop;
    if !world.are_linked(holder, next) {
        return Err(Error::Consistency(format!(
            "policy chose {next}, which is not a radio neighbour of {holder}"
        )));
    }
    packet.hops_used += 1;
    let booked = loads.is_none_or(|l| l.try_book(holder, next, packet.size));
    let mut outcome = if booked {
        packet.holder = next;
        HopOutcome::Relayed
    } else {
        packet.waits += 1;
        HopOutcome::CongestionWait
    };
    if packet.hops_used >= packet.ttl {
        outcome = HopOutcome::DroppedTtl;
    }
    Ok(HopStep {
        outcome,
        state: Some(state),
        action_index: decided.action_index,
    })
}

/// Draws `n` episodes: a start second with enough trace on both sides and
/// two distinct vehicles alive then, at least `min_shortest` hops apart on
/// the true graph.
pub fn sample_episodes(world: &World, n: usize, ttl: u32, min_shortest: u32, seed: u64) -> Result<Vec<EpisodeSpec>> {
    let lo = world.first_t() + LEAD_IN;
    let hi = world.last_t() - ttl as i64 - 1;
    if hi < lo {
        return Err(Error::Evaluation(format!(
            "world `{}` is too short for episodes with ttl {ttl}",
            world.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 200 * n.max(1) + 1000 {
            return Err(Error::Evaluation(format!(
                "could not find {n} routable vehicle pairs in world `{}`",
                world.name
            )));
        }
        let t0 = rng.gen_range(lo..=hi);
        let frame = world.frame(t0)?;
        if frame.vehicles.len() < 2 {
            continue;
        }
        let picks: Vec<_> = frame.vehicles.choose_multiple(&mut rng, 2).collect();
        let (src, dst) = (picks[0].vehicle_id, picks[1].vehicle_id);
        let topo = world.topology(t0)?;
        match hop_distance(&topo, src, dst) {
            Some(h) if h >= min_shortest.max(1) => out.push(EpisodeSpec {
                src,
                dst,
                t0,
                seed: rng.gen(),
            }),
            _ => {}
        }
    }
    Ok(out)
}

fn spawn_background(world: &Arc<Topology>, rng: &mut ChaCha8Rng, id: u64, ttl: u32, t: i64) -> Option<Packet> {
    let ids = world.node_ids();
    if ids.len() < 2 {
        return None;
    }
    for _ in 0..20 {
        let a = ids[rng.gen_range(0..ids.len())];
        let b = ids[rng.gen_range(0..ids.len())];
        if a == b {
            continue;
        }
        if let Some(h) = hop_distance(world, a, b) {
            let size = 1.0 - rng.gen::<f64>();
            return Some(Packet::new(id, a, b, ttl, size, t, h));
        }
    }
    None
}

struct Pending {
    state: PolicyState,
    action_index: usize,
    reward: f64,
}

/// Routes one packet from `spec.src` to `spec.dst` until it is delivered or
/// dropped, one hop per simulated second.
pub fn run_episode(world: &World, spec: &EpisodeSpec, policy: &dyn RoutingPolicy, cfg: &EpisodeConfig) -> Result<Episode> {
    let skip = |reason: String| Ok(Episode::Skipped { reason });
    if spec.src == spec.dst {
        return skip("source equals destination".into());
    }
    let topo0 = world.topology(spec.t0)?;
    if !topo0.contains(spec.src) || !topo0.contains(spec.dst) {
        return skip(format!("source or destination not alive at t={}", spec.t0));
    }
    let Some(shortest) = hop_distance(&topo0, spec.src, spec.dst) else {
        return skip(format!("no path from {} to {} at t={}", spec.src, spec.dst, spec.t0));
    };
    if world.last_t() < spec.t0 + cfg.ttl as i64 + 1 {
        return skip("trace ends before the hop budget".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = 1.0 - rng.gen::<f64>();
    let mut packet = Packet::new(0, spec.src, spec.dst, cfg.ttl, size, spec.t0, shortest);

    let mut bases = KnowledgeBases::new();
    if let ObservationMode::Partial { f } = cfg.observation {
        if f == 0 {
            return Err(Error::Parameter("broadcast frequency must be at least 1".into()));
        }
        for (t, rounds) in obs::warm_up_schedule(spec.t0, f, cfg.warm_up_rounds) {
            let Ok(frame) = world.frame(t) else {
                return skip(format!("warm-up second {t} is outside the trace"));
            };
            obs::exchange_second(frame, &mut bases, &*world.topology(t)?, rounds, DEFAULT_EVICTION_AGE)?;
        }
    }

    let congested = cfg.congestion == CongestionMode::Congestion;
    let mut loads = LinkLoad::default();
    let mut background: Vec<Packet> = Vec::new();
    let mut next_packet_id = 1u64;
    if congested {
        for _ in 0..cfg.background_packets {
            if let Some(p) = spawn_background(&topo0, &mut rng, next_packet_id, cfg.ttl, spec.t0) {
                background.push(p);
            }
            next_packet_id += 1;
        }
    }

    let mut snapshot: Option<Arc<Topology>> = None;
    let mut pending: Option<Pending> = None;
    let mut experiences = Vec::new();
    let mut max_link_load = 0.0f64;
    let mut t = spec.t0;
    let final_outcome = loop {
        let frame_topo = world.topology(t)?;
        if t > spec.t0 {
            if let ObservationMode::Partial { f } = cfg.observation {
                obs::exchange_second(world.frame(t)?, &mut bases, &frame_topo, f as usize, DEFAULT_EVICTION_AGE)?;
            }
        }
        let step_topo = if cfg.graph_every <= 1 {
            Arc::clone(&frame_topo)
        } else {
            let stale = (t - spec.t0) % cfg.graph_every as i64 == 0
                || snapshot
                    .as_ref()
                    .is_none_or(|s| !s.contains(packet.holder) || !s.contains(packet.destination));
            if stale {
                snapshot = Some(Arc::clone(&frame_topo));
            }
            Arc::clone(snapshot.as_ref().expect("set above"))
        };
        // gone vehicles are gone regardless of how old the snapshot is
        let world_topo = if frame_topo.contains(packet.holder) && frame_topo.contains(packet.destination) {
            step_topo
        } else {
            Arc::clone(&frame_topo)
        };

        loads.reset();
        let mut order: Vec<Option<usize>> = (0..background.len()).map(Some).collect();
        order.push(None);
        order.shuffle(&mut rng);
        let mut main_step = None;
        for slot in order {
            let step_seed: u64 = rng.gen();
            match slot {
                Some(i) => {
                    let p = &mut background[i];
                    let s = step_packet(
                        p,
                        &frame_topo,
                        Some(&frame_topo),
                        false,
                        world.scale,
                        policy,
                        Some(&mut loads),
                        step_seed,
                    )?;
                    if s.outcome.is_terminal() {
                        if let Some(fresh) =
                            spawn_background(&frame_topo, &mut rng, next_packet_id, cfg.ttl, t)
                        {
                            *p = fresh;
                        }
                        next_packet_id += 1;
                    }
                }
                None => {
                    let decision = match cfg.observation {
                        ObservationMode::Complete => Some(Arc::clone(&world_topo)),
                        ObservationMode::Partial { .. } => {
                            let needs_estimate = world_topo.contains(packet.holder)
                                && world_topo.contains(packet.destination)
                                && !world_topo.are_linked(packet.holder, packet.destination);
                            match (needs_estimate, bases.get(&packet.holder)) {
                                (true, Some(base)) => Some(Arc::new(obs::estimated_topology(
                                    base,
                                    cfg.predictor.as_deref(),
                                    &world.map,
                                    world.comm_range,
                                    t,
                                )?)),
                                _ => None,
                            }
                        }
                    };
                    let partial = matches!(cfg.observation, ObservationMode::Partial { .. });
                    let s = step_packet(
                        &mut packet,
                        &world_topo,
                        decision.as_ref(),
                        partial,
                        world.scale,
                        policy,
                        congested.then_some(&mut loads),
                        step_seed,
                    )?;
                    main_step = Some(s);
                }
            }
        }
        max_link_load = max_link_load.max(loads.max_booked());

        let step = main_step.expect("main packet moves every step");
        let reward = compute_reward(step.outcome, &cfg.rewards);
        if cfg.record_experience {
            match (step.state, step.action_index) {
                (Some(state), Some(action_index)) => {
                    if let Some(prev) = pending.take() {
                        experiences.push(Experience {
                            state: prev.state,
                            action_index: prev.action_index,
                            reward: prev.reward,
                            next_state: Some(state.clone()),
                            done: false,
                        });
                    }
                    pending = Some(Pending {
                        state,
                        action_index,
                        reward,
                    });
                }
                _ => {
                    if let Some(p) = pending.as_mut() {
                        p.reward += reward;
                    }
                }
            }
        }
        if step.outcome.is_terminal() {
            break step.outcome;
        }
        t += 1;
    };
    if let Some(prev) = pending.take() {
        experiences.push(Experience {
            state: prev.state,
            action_index: prev.action_index,
            reward: prev.reward,
            next_state: None,
            done: true,
        });
    }
    Ok(Episode::Ran(EpisodeRun {
        result: EpisodeResult::new(spec, &packet, final_outcome),
        experiences,
        max_link_load,
    }))
}
