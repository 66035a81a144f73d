//! Deep Q-learning for the routing network: rewards, replay, TD targets,
//! gradient steps and the leave-one-map-out training loop.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Tape};
use crate::policy::{masked_argmax, DqnPolicy, PolicyArch, PolicyState, QNet};
use crate::sim::{run_episode, sample_episodes, Episode, EpisodeConfig, HopOutcome, World};

/// Loss above which training is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Reward per hop outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub relayed: f64,
    pub delivered: f64,
    pub dropped_ttl: f64,
    pub dropped_unreachable: f64,
    pub congestion_wait: f64,
    pub stranded: f64,
    pub holder_lost: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            relayed: -1.0,
            delivered: 10.0,
            dropped_ttl: -10.0,
            dropped_unreachable: -10.0,
            congestion_wait: -1.0,
            stranded: -1.0,
            holder_lost: -10.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.relayed,
            self.delivered,
            self.dropped_ttl,
            self.dropped_unreachable,
            self.congestion_wait,
            self.stranded,
            self.holder_lost,
        ];
        if all.iter().all(|r| r.is_finite()) {
            Ok(())
        } else {
            Err(Error::Parameter("reward constants must be finite".into()))
        }
    }
}

pub fn compute_reward(outcome: HopOutcome, rewards: &RewardConfig) -> f64 {
    match outcome {
        HopOutcome::Relayed => rewards.relayed,
        HopOutcome::Delivered => rewards.delivered,
        HopOutcome::DroppedTtl => rewards.dropped_ttl,
        HopOutcome::DroppedUnreachable => rewards.dropped_unreachable,
        HopOutcome::DroppedHolderLost => rewards.holder_lost,
        HopOutcome::CongestionWait => rewards.congestion_wait,
        HopOutcome::Stranded => rewards.stranded,
    }
}

/// One decision and what followed it. `reward` sums every hop outcome up to
/// the next decision; `next_state` is `None` exactly when `done`.
#[derive(Debug, Clone)]
pub struct Experience {
    pub state: PolicyState,
    pub action_index: usize,
    pub reward: f64,
    pub next_state: Option<PolicyState>,
    pub done: bool,
}

impl Experience {
    pub fn validate(&self) -> Result<()> {
        if self.action_index >= self.state.pruned.retained.len() {
            return Err(Error::Validation(format!(
                "action {} is not among the {} valid actions",
                self.action_index,
                self.state.pruned.retained.len()
            )));
        }
        if !self.reward.is_finite() {
            return Err(Error::Validation("experience reward is not finite".into()));
        }
        if self.done != self.next_state.is_none() {
            return Err(Error::Validation("terminal transitions carry no next state and vice versa".into()));
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO ring of experiences.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    ring: Vec<Experience>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("replay capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            ring: Vec::new(),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Total experiences ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends, overwriting the oldest experience when full.
    pub fn push(&mut self, e: Experience) -> Result<()> {
        e.validate()?;
        if self.ring.len() < self.capacity {
            self.ring.push(e);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.ring[slot] = e;
        }
        self.inserted += 1;
        Ok(())
    }

    /// The `i`-th oldest experience still held.
    pub fn get(&self, i: usize) -> Option<&Experience> {
        if i >= self.ring.len() {
            return None;
        }
        let start = if self.ring.len() < self.capacity {
            0
        } else {
            (self.inserted % self.capacity as u64) as usize
        };
        self.ring.get((start + i) % self.ring.len())
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Experience> {
        (0..n).map(|_| &self.ring[rng.gen_range(0..self.ring.len())]).collect()
    }
}

/// Linear decay from `start` to `end` over `decay_steps` environment steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: 20_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub optimiser: AdamConfig,
    pub epsilon: EpsilonSchedule,
    /// Gradient steps between target-network syncs.
    pub target_sync_every: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Experiences collected before the first gradient step.
    pub learning_starts: usize,
    /// Environment steps per gradient step.
    pub train_every: u64,
    pub ttl: u32,
    /// Seconds between radio-graph recomputations during training episodes.
    pub graph_every: usize,
    /// Episodes between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub rewards: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            gamma: 0.95,
            optimiser: AdamConfig::default(),
            epsilon: EpsilonSchedule::default(),
            target_sync_every: 500,
            batch_size: 64,
            buffer_capacity: 50_000,
            learning_starts: 500,
            train_every: 1,
            ttl: crate::sim::DEFAULT_TTL,
            graph_every: 5,
            checkpoint_every: 500,
            rewards: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end)) {
            return Err(Error::Parameter("epsilon values must lie in [0, 1]".into()));
        }
        if self.target_sync_every == 0
            || self.batch_size == 0
            || self.buffer_capacity == 0
            || self.train_every == 0
            || self.ttl == 0
            || self.graph_every == 0
        {
            return Err(Error::Parameter(
                "batch size, buffer capacity, ttl and step intervals must be positive".into(),
            ));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::Parameter("batch size exceeds the replay capacity".into()));
        }
        self.optimiser.validate()?;
        self.rewards.validate()
    }
}

/// TD targets: `r` for terminal transitions, otherwise `r + gamma * max`
/// over the valid target-network Q-values of the next state.
pub fn td_target(batch: &[&Experience], target: &QNet, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Parameter("td_target needs a non-empty batch".into()));
    }
    batch
        .iter()
        .map(|e| match (&e.next_state, e.done) {
            (Some(next), false) if !next.pruned.retained.is_empty() => {
                let q = target.q_forward(next)?;
                let best = masked_argmax(&q.q_values, &q.valid_mask).ok_or(Error::NoAction)?;
                Ok(e.reward + gamma * q.q_values[best])
            }
            _ => Ok(e.reward),
        })
        .collect()
}

/// Mean squared TD error of the taken actions over `batch`, with its
/// gradient accumulated on a fresh tape.
fn batch_loss(net: &QNet, batch: &[&Experience], targets: &[f64]) -> Result<(f64, Vec<Option<crate::nn::Tensor>>)> {
    let mut tape = Tape::new();
    let bound = net.store().bind(&mut tape, true)?;
    let mut total = None;
    for (e, &y) in batch.iter().zip(targets) {
        let q = net.forward(&mut tape, &bound, &e.state)?;
        let taken = tape.pick(q, &[(0, e.action_index)])?;
        let d = tape.add_scalar(taken, -y)?;
        let sq = tape.mul(d, d)?;
        total = Some(match total {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    let total = total.ok_or_else(|| Error::Parameter("empty batch".into()))?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    Ok((value, bound.grads(&tape)))
}

/// One gradient step on a uniformly sampled batch; returns the pre-step
/// loss.
pub fn train_step(
    buffer: &ReplayBuffer,
    net: &mut QNet,
    target: &QNet,
    opt: &mut Adam,
    batch_size: usize,
    gamma: f64,
    rng_seed: u64,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    if buffer.len() < batch_size {
        return Err(Error::NotReady {
            have: buffer.len(),
            need: batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let batch = buffer.sample(batch_size, &mut rng);
    let targets = td_target(&batch, target, gamma)?;
    let (loss, grads) = batch_loss(net, &batch, &targets)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("TD loss".into()));
    }
    opt.step(net.store_mut(), grads);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    /// Environment steps so far.
    pub steps: u64,
    pub epsilon: f64,
    /// Mean loss of this episode's gradient steps, if there were any.
    pub loss: Option<f64>,
    pub spr: Option<f64>,
    pub pspr: f64,
    pub rr: f64,
}

pub const TRAIN_LOG_HEADER: &str = "episode,steps,epsilon,loss,spr,pspr,rr";

pub fn write_training_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in rows {
        let loss = r.loss.map(|l| format!("{l:.6}")).unwrap_or_default();
        let spr = r.spr.map(|s| format!("{s:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{loss},{spr},{:.6},{:.6}\n",
            r.episode, r.steps, r.epsilon, r.pspr, r.rr
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNet,
    pub log: Vec<TrainLogRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains a fresh network on episodes drawn round-robin from `worlds`.
///
/// Each episode is played by a snapshot of the current network at the
/// epsilon of its first step; its experiences then drive one gradient step
/// per `train_every` environment steps.
pub fn run_training(
    worlds: &[Arc<World>],
    arch: PolicyArch,
    cfg: &TrainConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if worlds.len() < 2 {
        return Err(Error::Parameter(format!(
            "training needs at least 2 maps, got {}",
            worlds.len()
        )));
    }
    cfg.validate()?;
    let mut net = QNet::new(arch, seed)?;
    let mut target = net.clone();
    let mut opt = Adam::new(net.store(), cfg.optimiser);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d9a1);
    let ep_cfg = EpisodeConfig {
        ttl: cfg.ttl,
        graph_every: cfg.graph_every,
        rewards: cfg.rewards,
        record_experience: true,
        ..EpisodeConfig::default()
    };
    let mut log = Vec::new();
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    let mut steps = 0u64;
    let mut updates = 0u64;

    for episode in 0..cfg.episodes {
        let world = &worlds[episode % worlds.len()];
        let epsilon = cfg.epsilon.value(steps);
        let policy = DqnPolicy {
            net: Arc::new(net.clone()),
            epsilon,
        };
        let run = loop {
            let spec = sample_episodes(world, 1, cfg.ttl, 2, rng.gen())?[0];
            if let Episode::Ran(run) = run_episode(world, &spec, &policy, &ep_cfg)? {
                break run;
            }
        };
        let mut losses = Vec::new();
        for e in run.experiences {
            buffer.push(e)?;
            steps += 1;
            if steps.is_multiple_of(cfg.train_every) && buffer.len() >= cfg.batch_size.max(cfg.learning_starts) {
                let loss = train_step(&buffer, &mut net, &target, &mut opt, cfg.batch_size, cfg.gamma, rng.gen())
                    .map_err(|err| match err {
                        Error::Numeric(_) => Error::TrainingFailure {
                            episode,
                            loss: f64::NAN,
                            last_checkpoint: checkpoints.last().cloned(),
                        },
                        other => other,
                    })?;
                if loss > DIVERGENCE_LOSS {
                    return Err(Error::TrainingFailure {
                        episode,
                        loss,
                        last_checkpoint: checkpoints.last().cloned(),
                    });
                }
                losses.push(loss);
                updates += 1;
                if updates.is_multiple_of(cfg.target_sync_every) {
                    target = net.clone();
                }
            }
        }
        let r = &run.result;
        log.push(TrainLogRow {
            episode,
            steps,
            epsilon,
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            spr: r.spr,
            pspr: r.pspr,
            rr: f64::from(u8::from(r.delivered)),
        });
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("qnet_ep{:06}.json", episode + 1));
                net.save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    Ok(TrainOutcome { net, log, checkpoints })
}
