//! The routing Q-network and the policies that drive packets.
//!
//! Forward pass: features of the (pruned) local graph go through GraphSAGE;
//! the rows of the retained neighbours query all node rows through
//! cross-attention; the per-neighbour outputs are zero-padded to a fixed
//! number of action slots, flattened, and mapped to one Q-value per slot.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{bfs_from_index, CommGraph, Hops, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    cross_attention, dense, graphsage_layer, AttentionParams, Bound, DenseParams, ParamStore, SageLayerParams, Tape, Var,
};
use crate::pruning::{prune_actions, PrunedActionSet, DEFAULT_K_MAX};
use crate::road::VehicleId;

pub const CHECKPOINT_FORMAT: &str = "trajaware-qnet";

/// How a holder's candidate next hops are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionSpace {
    pub k_max: usize,
    pub use_pruning: bool,
    /// Slot count when pruning is off; extra neighbours are dropped at random.
    pub unpruned_cap: usize,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            use_pruning: true,
            unpruned_cap: 32,
        }
    }
}

impl ActionSpace {
    pub fn slots(&self) -> usize {
        if self.use_pruning {
            self.k_max
        } else {
            self.unpruned_cap
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || self.unpruned_cap == 0 {
            return Err(Error::Parameter("action slot counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn select(&self, graph: &CommGraph, seed: u64) -> Result<PrunedActionSet> {
        if self.use_pruning {
            prune_actions(&graph.topology, graph.holder, self.k_max, seed)
        } else {
            PrunedActionSet::unpruned(&graph.topology, graph.holder, self.unpruned_cap, seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyArch {
    pub hidden: usize,
    pub sage_layers: usize,
    pub d_h: usize,
    pub heads: usize,
    pub use_attention: bool,
    /// Concatenate every GraphSAGE layer's output instead of using the last.
    pub jk_concat: bool,
    /// Node rows flattened by the attention-free readout.
    pub max_nodes: usize,
    pub actions: ActionSpace,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self {
            hidden: 64,
            sage_layers: 2,
            d_h: 64,
            heads: 1,
            use_attention: true,
            jk_concat: false,
            max_nodes: 128,
            actions: ActionSpace::default(),
        }
    }
}

impl PolicyArch {
    pub fn validate(&self) -> Result<()> {
        self.actions.validate()?;
        if self.hidden == 0 || self.sage_layers == 0 || self.d_h == 0 || self.max_nodes == 0 {
            return Err(Error::Parameter("network widths and depths must be at least 1".into()));
        }
        if self.heads == 0 || !self.d_h.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "d_h = {} is not divisible into {} heads",
                self.d_h, self.heads
            )));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        if self.jk_concat {
            self.hidden * self.sage_layers
        } else {
            self.hidden
        }
    }
}

/// What the agent sees when choosing a next hop.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub graph: CommGraph,
    pub pruned: PrunedActionSet,
}

impl PolicyState {
    pub fn new(graph: CommGraph, actions: &ActionSpace, seed: u64) -> Result<Self> {
        let pruned = actions.select(&graph, seed)?;
        Ok(Self { graph, pruned })
    }

    pub fn with_pruned(graph: CommGraph, pruned: PrunedActionSet) -> Result<Self> {
        if pruned.holder_id != graph.holder {
            return Err(Error::Consistency(format!(
                "action set of {} used for holder {}",
                pruned.holder_id, graph.holder
            )));
        }
        for &id in &pruned.retained {
            if !graph.topology.are_linked(graph.holder, id) {
                return Err(Error::Consistency(format!("{id} is not a neighbour of {}", graph.holder)));
            }
        }
        Ok(Self { graph, pruned })
    }

    pub fn holder(&self) -> VehicleId {
        self.graph.holder
    }

    pub fn destination(&self) -> VehicleId {
        self.graph.destination
    }

    /// Neighbour lists with the holder's links to discarded neighbours cut.
    pub fn local_neighbours(&self) -> Vec<Vec<usize>> {
        let topo = &*self.graph.topology;
        let h = topo.index_of(self.graph.holder).expect("holder is in graph");
        let kept: Vec<usize> = self
            .pruned
            .retained
            .iter()
            .map(|&id| topo.index_of(id).expect("retained ids are in graph"))
            .collect();
        let mut lists = topo.neighbour_lists().to_vec();
        lists[h].retain(|j| kept.contains(j));
        for (j, list) in lists.iter_mut().enumerate() {
            if j != h && !kept.contains(&j) {
                list.retain(|&k| k != h);
            }
        }
        lists
    }

    fn retained_rows(&self) -> Vec<usize> {
        self.pruned
            .retained
            .iter()
            .map(|&id| self.graph.topology.index_of(id).expect("retained ids are in graph"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    pub q_values: Vec<f64>,
    pub valid_mask: Vec<bool>,
    /// Vehicle behind each valid slot.
    pub action_ids: Vec<VehicleId>,
}

#[derive(Debug, Clone, PartialEq)]
enum Readout {
    Attention(AttentionParams),
    /// Attention-free baseline: a per-node dense layer over all node rows,
    /// padded to `max_nodes`, flattened into the head.
    Flat(DenseParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    arch: PolicyArch,
    store: ParamStore,
    sage: Vec<SageLayerParams>,
    readout: Readout,
    head: DenseParams,
}

impl QNet {
    pub fn new(arch: PolicyArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut sage = Vec::with_capacity(arch.sage_layers);
        let mut d_in = FEATURE_DIM;
        for l in 0..arch.sage_layers {
            sage.push(SageLayerParams::new(&mut store, &format!("sage{l}"), d_in, arch.hidden, &mut rng));
            d_in = arch.hidden;
        }
        let emb = arch.embedding_dim();
        let slots = arch.actions.slots();
        let (readout, flat_width) = if arch.use_attention {
            let att = AttentionParams::new(&mut store, "attention", emb, arch.d_h, arch.heads, &mut rng)?;
            (Readout::Attention(att), slots * arch.d_h)
        } else {
            let lin = DenseParams::new(&mut store, "node_linear", emb, arch.d_h, &mut rng);
            (Readout::Flat(lin), arch.max_nodes * arch.d_h)
        };
        let head = DenseParams::new(&mut store, "head", flat_width, slots, &mut rng);
        Ok(Self {
            arch,
            store,
            sage,
            readout,
            head,
        })
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn slots(&self) -> usize {
        self.arch.actions.slots()
    }

    pub fn sage_params(&self) -> &[SageLayerParams] {
        &self.sage
    }

    pub fn attention_params(&self) -> Option<&AttentionParams> {
        match &self.readout {
            Readout::Attention(a) => Some(a),
            Readout::Flat(_) => None,
        }
    }

    pub fn head_params(&self) -> &DenseParams {
        &self.head
    }

    fn check_state(&self, state: &PolicyState) -> Result<()> {
        let r = state.pruned.retained.len();
        if r == 0 {
            return Err(Error::NoAction);
        }
        if r > self.slots() {
            return Err(Error::Shape(format!(
                "{r} candidate actions exceed the network's {} slots",
                self.slots()
            )));
        }
        Ok(())
    }

    /// GraphSAGE node embeddings of the pruned local graph.
    pub fn embed(&self, tape: &mut Tape, bound: &Bound, state: &PolicyState) -> Result<Var> {
        let x = tape.constant(state.graph.features())?;
        let lists = Arc::new(state.local_neighbours());
        let mut h = x;
        let mut layers = Vec::with_capacity(self.sage.len());
        for p in &self.sage {
            h = graphsage_layer(tape, bound, p, h, Arc::clone(&lists))?;
            layers.push(h);
        }
        if self.arch.jk_concat && layers.len() > 1 {
            tape.concat_cols(&layers)
        } else {
            Ok(h)
        }
    }

    /// Per-neighbour cross-attention outputs, one row per retained neighbour
    /// in retained order.
    pub fn attention_rows(&self, tape: &mut Tape, bound: &Bound, state: &PolicyState) -> Result<Var> {
        let Readout::Attention(att) = &self.readout else {
            return Err(Error::Usage("network has no attention stage".into()));
        };
        self.check_state(state)?;
        let emb = self.embed(tape, bound, state)?;
        let s = tape.select_rows(emb, &state.retained_rows())?;
        cross_attention(tape, bound, att, s, emb)
    }

    /// Q-values for every slot as a `1 × slots` row.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, state: &PolicyState) -> Result<Var> {
        self.check_state(state)?;
        let slots = self.slots();
        let d_h = self.arch.d_h;
        let flat = match &self.readout {
            Readout::Attention(_) => {
                let rows = self.attention_rows(tape, bound, state)?;
                let padded = tape.pad_rows(rows, slots)?;
                tape.reshape(padded, 1, slots * d_h)?
            }
            Readout::Flat(lin) => {
                let emb = self.embed(tape, bound, state)?;
                let n = tape.shape(emb)[0];
                let max = self.arch.max_nodes;
                let emb = if n > max {
                    tape.select_rows(emb, &(0..max).collect::<Vec<_>>())?
                } else {
                    emb
                };
                let rows = dense(tape, bound, lin, emb)?;
                let padded = tape.pad_rows(rows, max)?;
                tape.reshape(padded, 1, max * d_h)?
            }
        };
        dense(tape, bound, &self.head, flat)
    }

    pub fn q_forward(&self, state: &PolicyState) -> Result<QOutput> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false)?;
        let q = self.forward(&mut tape, &bound, state)?;
        let q_values = tape.value(q).data().to_vec();
        let r = state.pruned.retained.len();
        Ok(QOutput {
            valid_mask: (0..q_values.len()).map(|i| i < r).collect(),
            q_values,
            action_ids: state.pruned.retained.clone(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.store.save(path, CHECKPOINT_FORMAT)
    }

    pub fn load(arch: PolicyArch, path: &std::path::Path) -> Result<Self> {
        let mut net = Self::new(arch, 0)?;
        net.store.load(path, CHECKPOINT_FORMAT)?;
        Ok(net)
    }
}

/// Epsilon-greedy choice over the valid slots; greedy ties go to the lowest
/// index and masked slots never win.
pub fn select_action(q: &QOutput, epsilon: f64, rng_seed: u64) -> Result<usize> {
    let valid: Vec<usize> = (0..q.q_values.len()).filter(|&i| q.valid_mask[i]).collect();
    if valid.is_empty() {
        return Err(Error::NoAction);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(valid[rng.gen_range(0..valid.len())]);
    }
    Ok(masked_argmax(&q.q_values, &q.valid_mask).expect("at least one valid slot"))
}

pub(crate) fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        let v = if ok { v } else { f64::NEG_INFINITY };
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// A chosen next hop. `action_index` is the slot for learned policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub next_hop: VehicleId,
    pub action_index: Option<usize>,
}

pub trait RoutingPolicy: Send + Sync {
    fn name(&self) -> &str;

    fn action_space(&self) -> ActionSpace;

    fn decide(&self, state: &PolicyState, rng_seed: u64) -> Result<Decision>;
}

/// Epsilon-greedy over a [`QNet`].
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub net: Arc<QNet>,
    pub epsilon: f64,
}

impl DqnPolicy {
    pub fn greedy(net: Arc<QNet>) -> Self {
        Self { net, epsilon: 0.0 }
    }
}

impl RoutingPolicy for DqnPolicy {
    fn name(&self) -> &str {
        "dqn"
    }

    fn action_space(&self) -> ActionSpace {
        self.net.arch.actions
    }

    fn decide(&self, state: &PolicyState, rng_seed: u64) -> Result<Decision> {
        let q = self.net.q_forward(state)?;
        let i = select_action(&q, self.epsilon, rng_seed)?;
        Ok(Decision {
            next_hop: q.action_ids[i],
            action_index: Some(i),
        })
    }
}

/// Moves to the neighbour with the fewest hops to the destination on the
/// state's graph, ignoring the pruned set; ties go to the lowest id.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy {
    pub actions: ActionSpace,
}

impl RoutingPolicy for OraclePolicy {
    fn name(&self) -> &str {
        "bfs-oracle"
    }

    fn action_space(&self) -> ActionSpace {
        self.actions
    }

    fn decide(&self, state: &PolicyState, _rng_seed: u64) -> Result<Decision> {
        let topo = &*state.graph.topology;
        let d = topo.require(state.destination())?;
        let h = topo.require(state.holder())?;
        let dist = bfs_from_index(topo, d);
        let best = topo
            .neighbour_indices(h)
            .iter()
            .filter_map(|&j| match dist[j] {
                Hops::Reachable(k) => Some((k, topo.node_ids()[j])),
                Hops::Unreachable => None,
            })
            .min()
            .or_else(|| topo.neighbour_indices(h).first().map(|&j| (u32::MAX, topo.node_ids()[j])));
        let (_, next_hop) = best.ok_or(Error::NoAction)?;
        Ok(Decision {
            next_hop,
            action_index: state.pruned.retained.iter().position(|&r| r == next_hop),
        })
    }
}

/// Uniform over the candidate actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy {
    pub actions: ActionSpace,
}

impl RoutingPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn action_space(&self) -> ActionSpace {
        self.actions
    }

    fn decide(&self, state: &PolicyState, rng_seed: u64) -> Result<Decision> {
        let r = &state.pruned.retained;
        if r.is_empty() {
            return Err(Error::NoAction);
        }
        let i = ChaCha8Rng::seed_from_u64(rng_seed).gen_range(0..r.len());
        Ok(Decision {
            next_hop: r[i],
            action_index: Some(i),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(q: &[f64], valid: usize) -> QOutput {
        QOutput {
            q_values: q.to_vec(),
            valid_mask: (0..q.len()).map(|i| i < valid).collect(),
            action_ids: (0..valid as u32).collect(),
        }
    }

    #[test]
    fn greedy_picks_max_with_low_index_ties() {
        assert_eq!(select_action(&out(&[1.0, 3.0, 2.0], 3), 0.0, 0).unwrap(), 1);
        assert_eq!(select_action(&out(&[2.0, 2.0, 1.0], 3), 0.0, 0).unwrap(), 0);
    }

    #[test]
    fn masked_slot_never_wins() {
        for seed in 0..200 {
            assert!(select_action(&out(&[0.0, 9.0], 1), 0.5, seed).unwrap() == 0);
        }
        assert!(matches!(select_action(&out(&[1.0], 0), 0.0, 0), Err(Error::NoAction)));
    }
}
