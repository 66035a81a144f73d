#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajaware::comm::Topology;
use trajaware::nn::{Bound, ParamStore, Tape, Tensor, Var};
use trajaware::road::{NodeId, RoadNetwork, SegmentNode, TraceFrame, VehicleId, VehicleState};
use trajaware::sim::World;
use trajaware::{Point, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest norm-wise relative error between tape gradients and central
/// differences, over every parameter of `store` and every input, for the
/// loss `sum(out * R)` with a fixed random `R`.
pub fn gradient_error<F>(store: &mut ParamStore, inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> Result<Var>,
{
    const EPS: f64 = 1e-5;
    let weights: std::cell::RefCell<Option<Tensor>> = std::cell::RefCell::new(None);
    let loss_of = |store: &ParamStore, inputs: &[Tensor], want_grads: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, want_grads).unwrap();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|x| tape.leaf(x.clone(), want_grads).unwrap())
            .collect();
        let out = f(&mut tape, &bound, &vars).unwrap();
        let [r, c] = tape.shape(out);
        let w = weights
            .borrow_mut()
            .get_or_insert_with(|| random_tensor(&mut rng(seed ^ 0xabc), r, c, 1.0))
            .clone();
        let w = tape.constant(w).unwrap();
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.value(loss).item();
        if !want_grads {
            return (value, Vec::new());
        }
        tape.backward(loss).unwrap();
        let mut grads: Vec<Tensor> = bound
            .grads(&tape)
            .into_iter()
            .zip(store.ids())
            .map(|(g, id)| {
                let [r, c] = store.get(id).shape();
                g.unwrap_or_else(|| Tensor::zeros(r, c))
            })
            .collect();
        for (v, x) in vars.iter().zip(inputs) {
            grads.push(tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols())));
        }
        (value, grads)
    };

    let (_, analytic) = loss_of(store, inputs, true);
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.iter().enumerate() {
        let mut numeric = Vec::with_capacity(store.get(*id).len());
        for i in 0..store.get(*id).len() {
            let orig = store.get(*id).data()[i];
            store.get_mut(*id).data_mut()[i] = orig + EPS;
            let (up, _) = loss_of(store, inputs, false);
            store.get_mut(*id).data_mut()[i] = orig - EPS;
            let (down, _) = loss_of(store, inputs, false);
            store.get_mut(*id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * EPS));
        }
        worst = worst.max(relative(analytic[k].data(), &numeric));
    }
    let mut inputs = inputs.to_vec();
    for j in 0..inputs.len() {
        let mut numeric = Vec::with_capacity(inputs[j].len());
        for i in 0..inputs[j].len() {
            let orig = inputs[j].data()[i];
            inputs[j].data_mut()[i] = orig + EPS;
            let (up, _) = loss_of(store, &inputs, false);
            inputs[j].data_mut()[i] = orig - EPS;
            let (down, _) = loss_of(store, &inputs, false);
            inputs[j].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * EPS));
        }
        worst = worst.max(relative(analytic[ids.len() + j].data(), &numeric));
    }
    worst
}

fn relative(a: &[f64], n: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-9 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Unit-disk graph over `n` random points in a square of side `side`.
pub fn random_topology(rng: &mut impl Rng, n: usize, side: f64, range: f64) -> Topology {
    let nodes = (0..n)
        .map(|i| (i as VehicleId, Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))))
        .collect();
    Topology::from_positions(nodes, range).unwrap()
}

/// Vehicles at fixed points on a straight road, repeated for `seconds`.
pub fn static_world(xs: &[(f64, f64)], seconds: i64) -> World {
    let max_x = xs.iter().map(|p| p.0).fold(100.0, f64::max);
    let max_y = xs.iter().map(|p| p.1).fold(100.0, f64::max);
    let end = Point::new(max_x, max_y);
    let pieces = (end.x.hypot(end.y) / 150.0).ceil() as usize;
    let nodes: Vec<SegmentNode> = (0..=pieces)
        .map(|i| {
            let f = i as f64 / pieces as f64;
            SegmentNode {
                id: i as NodeId,
                position: Point::new(end.x * f, end.y * f),
            }
        })
        .collect();
    let segments = (0..pieces).map(|i| (i as NodeId, i as NodeId + 1)).collect();
    let map = RoadNetwork::new(nodes, segments, vec![0, pieces as NodeId]).unwrap();
    let frames: Vec<TraceFrame> = (0..seconds)
        .map(|t| TraceFrame {
            time_step: t,
            vehicles: xs
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| VehicleState {
                    vehicle_id: i as VehicleId,
                    position: Point::new(x, y),
                    speed: 0.0,
                    planned_path: vec![pieces as NodeId],
                })
                .collect(),
        })
        .collect();
    World::new("static", Arc::new(map), Arc::new(frames), 800.0, 8).unwrap()
}

/// Floyd–Warshall hop counts over a topology's adjacency.
pub fn floyd_warshall(topo: &Topology) -> Vec<Vec<Option<u32>>> {
    let n = topo.len();
    let mut d = vec![vec![None; n]; n];
    for i in 0..n {
        d[i][i] = Some(0);
        for j in 0..n {
            if i != j && topo.adjacent(i, j) {
                d[i][j] = Some(1);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

/// Minimum number of the holder's neighbours whose neighbourhoods cover its
/// two-hop set, by exhaustive search up to `limit`; `None` if larger.
pub fn min_two_hop_cover(topo: &Topology, holder: usize, limit: usize) -> Option<usize> {
    let nbrs: Vec<usize> = topo.neighbour_indices(holder).to_vec();
    let two_hop: Vec<usize> = (0..topo.len())
        .filter(|&k| k != holder && !topo.adjacent(holder, k))
        .filter(|&k| nbrs.iter().any(|&j| topo.adjacent(j, k)))
        .collect();
    if two_hop.is_empty() {
        return Some(0);
    }
    for size in 1..=limit.min(nbrs.len()) {
        if subsets(&nbrs, size)
            .iter()
            .any(|set| two_hop.iter().all(|&k| set.iter().any(|&j| topo.adjacent(j, k))))
        {
            return Some(size);
        }
    }
    None
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

pub const LAYERS: [&str; 6] = ["dense", "softmax", "graphsage", "cross_attention", "gru", "projection"];

fn random_lists(rng: &mut impl Rng, n: usize) -> Arc<Vec<Vec<usize>>> {
    let mut lists = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.4) {
                lists[i].push(j);
                lists[j].push(i);
            }
        }
    }
    Arc::new(lists)
}

/// Gradient error of one layer kind at one random configuration.
pub fn layer_gradient_error(layer: &str, seed: u64) -> f64 {
    use trajaware::nn::*;
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    match layer {
        "dense" => {
            let p = DenseParams::new(&mut store, "d", 4, 3, &mut r);
            let x = random_tensor(&mut r, 5, 4, 1.0);
            gradient_error(&mut store, &[x], seed, |t, b, v| dense(t, b, &p, v[0]))
        }
        "softmax" => {
            let x = random_tensor(&mut r, 4, 5, 2.0);
            gradient_error(&mut store, &[x], seed, |t, _, v| t.softmax_rows(v[0]))
        }
        "graphsage" => {
            let p = SageLayerParams::new(&mut store, "s", 4, 3, &mut r);
            let lists = random_lists(&mut r, 6);
            let x = random_tensor(&mut r, 6, 4, 1.0);
            gradient_error(&mut store, &[x], seed, |t, b, v| {
                graphsage_layer(t, b, &p, v[0], Arc::clone(&lists))
            })
        }
        "cross_attention" => {
            let p = AttentionParams::new(&mut store, "a", 4, 4, 2, &mut r).unwrap();
            let s = random_tensor(&mut r, 3, 4, 1.0);
            let ctx = random_tensor(&mut r, 5, 4, 1.0);
            gradient_error(&mut store, &[s, ctx], seed, |t, b, v| cross_attention(t, b, &p, v[0], v[1]))
        }
        "gru" => {
            let p = GruParams::new(&mut store, "g", 3, 4, &mut r);
            let x = random_tensor(&mut r, 2, 3, 1.0);
            let h = random_tensor(&mut r, 2, 4, 1.0);
            gradient_error(&mut store, &[x, h], seed, |t, b, v| gru_step(t, b, &p, v[0], v[1]))
        }
        "projection" => {
            let map = Arc::new(trajaware::road::generate_map(seed, 3, 3, 300.0, 0.5).unwrap());
            let pts: Vec<f64> = (0..8).map(|_| r.gen_range(0.0..600.0)).collect();
            let x = Tensor::from_vec(4, 2, pts).unwrap();
            gradient_error(&mut store, &[x], seed, |t, _, v| trajaware::traj::project_rows(t, v[0], &map))
        }
        other => panic!("unknown layer {other}"),
    }
}

/// One random cross-attention trial: whether permuting the query rows
/// permutes the output rows bit for bit, and the largest deviation when the
/// context rows are permuted instead.
pub fn attention_trial(seed: u64) -> (bool, f64) {
    use rand::seq::SliceRandom;
    use trajaware::nn::{cross_attention, AttentionParams};
    let mut r = rng(seed);
    let d_in = r.gen_range(1..9);
    let heads = r.gen_range(1..4);
    let d_h = heads * r.gen_range(1..5);
    let n = r.gen_range(1..9);
    let m = r.gen_range(1..17);
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "a", d_in, d_h, heads, &mut r).unwrap();
    let s = random_tensor(&mut r, n, d_in, 2.0);
    let ctx = random_tensor(&mut r, m, d_in, 2.0);
    let run = |s: &Tensor, ctx: &Tensor| {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false).unwrap();
        let sv = tape.constant(s.clone()).unwrap();
        let cv = tape.constant(ctx.clone()).unwrap();
        let out = cross_attention(&mut tape, &bound, &p, sv, cv).unwrap();
        tape.value(out).clone()
    };
    let base = run(&s, &ctx);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let s_perm = Tensor::from_rows(&perm.iter().map(|&i| s.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let out_perm = run(&s_perm, &ctx);
    let equivariant = perm.iter().enumerate().all(|(k, &i)| out_perm.row(k) == base.row(i));
    let mut cperm: Vec<usize> = (0..m).collect();
    cperm.shuffle(&mut r);
    let ctx_perm = Tensor::from_rows(&cperm.iter().map(|&i| ctx.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let err = run(&s, &ctx_perm).max_abs_diff(&base);
    (equivariant, err)
}

/// Freshest timestamp each vehicle holds about every other, by direct
/// synchronous relay over an adjacency list.
pub fn relay_timestamps(adj: &[Vec<usize>], seconds: i64, rounds: usize) -> Vec<Vec<Option<i64>>> {
    let n = adj.len();
    let mut known = vec![vec![None; n]; n];
    for t in 0..seconds {
        for (i, row) in known.iter_mut().enumerate() {
            row[i] = Some(t);
        }
        for _ in 0..rounds {
            let prev = known.clone();
            for i in 0..n {
                for &j in &adj[i] {
                    for k in 0..n {
                        if prev[j][k] > known[i][k] {
                            known[i][k] = prev[j][k];
                        }
                    }
                }
            }
        }
        for row in known.iter_mut() {
            for v in row.iter_mut() {
                if v.is_some_and(|s| t - s > trajaware::obs::DEFAULT_EVICTION_AGE) {
                    *v = None;
                }
            }
        }
    }
    known
}

/// Always relays to the lowest-id candidate; on a chain it bounces back
/// towards the source forever.
pub struct LowestId;

impl trajaware::policy::RoutingPolicy for LowestId {
    fn name(&self) -> &str {
        "lowest-id"
    }

    fn action_space(&self) -> trajaware::policy::ActionSpace {
        trajaware::policy::ActionSpace::default()
    }

    fn decide(&self, state: &trajaware::policy::PolicyState, _seed: u64) -> Result<trajaware::policy::Decision> {
        let (i, &next_hop) = state
            .pruned
            .retained
            .iter()
            .enumerate()
            .min_by_key(|&(_, &id)| id)
            .unwrap();
        Ok(trajaware::policy::Decision {
            next_hop,
            action_index: Some(i),
        })
    }
}

pub fn chain(n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|i| (100.0 + 700.0 * i as f64, 100.0)).collect()
}
