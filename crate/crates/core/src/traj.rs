//! Trajectory prediction from stale observations.
//!
//! A GRU reads a short window of observations (position plus the next two
//! segment nodes on the planned path) and predicts the displacement over the
//! next second. The predicted point is projected onto the nearest road; the
//! projection is part of the gradient graph. Multi-step prediction feeds each
//! output back in, advancing along the planned path as segment nodes are
//! passed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::nn::{dense, gru_step, Adam, AdamConfig, Bound, DenseParams, GruParams, ParamStore, Tape, Tensor, Var};
use crate::road::{next_two_segment_nodes, NodeId, RoadNetwork, TraceFrame, VehicleState};

pub const CHECKPOINT_FORMAT: &str = "trajaware-predictor";

/// Metres per unit of the displacement head and of the velocity feature.
const STEP_SCALE: f64 = 20.0;
/// Metres per unit of the segment-node offset features.
const NODE_SCALE: f64 = 200.0;
const INPUT_DIM: usize = 6;

/// Recurrent prediction steps needed to bridge the staleness of a vehicle
/// `n_hop` hops away when knowledge is broadcast `f` times per second.
pub fn missing_steps(n_hop: u32, f: u32) -> Result<u32> {
    if n_hop == 0 || f == 0 {
        return Err(Error::Parameter(format!(
            "missing_steps needs n_hop >= 1 and f >= 1, got ({n_hop}, {f})"
        )));
    }
    Ok(n_hop.div_ceil(f) - 1)
}

/// Current position and the next two segment nodes, each divided by the map
/// extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajInput(pub [f64; 6]);

pub fn encode_input(map: &RoadNetwork, v: &VehicleState) -> Result<TrajInput> {
    let (a, b) = next_two_segment_nodes(map, v)?;
    let (w, h) = map.bounds();
    let (w, h) = (w.max(f64::MIN_POSITIVE), h.max(f64::MIN_POSITIVE));
    Ok(TrajInput([
        v.position.x / w,
        v.position.y / h,
        a.position.x / w,
        a.position.y / h,
        b.position.x / w,
        b.position.y / h,
    ]))
}

/// A single observation of a vehicle, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub position: Point,
    pub next: [NodeId; 2],
}

impl Observation {
    pub fn of(v: &VehicleState) -> Result<Self> {
        let Some(&first) = v.planned_path.first() else {
            return Err(Error::Consistency(format!("vehicle {} has an empty planned path", v.vehicle_id)));
        };
        Ok(Self {
            position: v.position,
            next: [first, v.planned_path.get(1).copied().unwrap_or(first)],
        })
    }
}

/// Nearest point of the road network; ties go to the lowest segment index.
pub fn project_to_road(p: Point, map: &RoadNetwork) -> Result<Point> {
    Ok(project_with_jacobian(p, map)?.0)
}

/// Projection plus its local Jacobian `[d x'/dx, d x'/dy, d y'/dx, d y'/dy]`:
/// `u uᵀ` for a foot inside a segment of direction `u`, zero at an endpoint.
pub fn project_with_jacobian(p: Point, map: &RoadNetwork) -> Result<(Point, [f64; 4])> {
    if map.segments().is_empty() {
        return Err(Error::Configuration("cannot project onto a map without segments".into()));
    }
    if !p.is_finite() {
        return Err(Error::Numeric("projection input".into()));
    }
    let mut best: Option<(geom::Foot, usize)> = None;
    for s in 0..map.segments().len() {
        let (a, b) = map.segment_points(s);
        let foot = geom::project_onto_segment(p, a, b);
        if best.is_none_or(|(f, _)| foot.dist_sq < f.dist_sq) {
            best = Some((foot, s));
        }
    }
    let (foot, s) = best.expect("at least one segment");
    let jac = if foot.interior {
        let (a, b) = map.segment_points(s);
        let len = a.dist(b);
        let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        [ux * ux, ux * uy, ux * uy, uy * uy]
    } else {
        [0.0; 4]
    };
    Ok((foot.point, jac))
}

/// Records a projection of every row of `points` (`n × 2`) on the tape.
pub fn project_rows(tape: &mut Tape, points: Var, map: &RoadNetwork) -> Result<Var> {
    let value = tape.value(points).clone();
    let n = value.rows();
    let mut out = Tensor::zeros(n, 2);
    let mut jacs = Vec::with_capacity(n);
    for r in 0..n {
        let (q, j) = project_with_jacobian(Point::new(value.get(r, 0), value.get(r, 1)), map)?;
        out.set(r, 0, q.x);
        out.set(r, 1, q.y);
        jacs.push(j);
    }
    tape.row_jacobian(points, out, jacs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub hidden: usize,
    /// Observations fed to the GRU before predicting.
    pub window: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub optimiser: AdamConfig,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            window: 5,
            epochs: 30,
            batches_per_epoch: 50,
            batch_size: 64,
            optimiser: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.window == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Parameter(
                "predictor hidden, window, batch_size and batches_per_epoch must be at least 1".into(),
            ));
        }
        self.optimiser.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    hidden: usize,
    window: usize,
    store: ParamStore,
    gru: GruParams,
    head: DenseParams,
}

impl Predictor {
    pub fn new(hidden: usize, window: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || window == 0 {
            return Err(Error::Parameter("predictor hidden size and window must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let gru = GruParams::new(&mut store, "gru", INPUT_DIM, hidden, &mut rng);
        let head = DenseParams::new(&mut store, "head", hidden, 2, &mut rng);
        Ok(Self {
            hidden,
            window,
            store,
            gru,
            head,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path, CHECKPOINT_FORMAT)
    }

    pub fn load(hidden: usize, window: usize, path: &Path) -> Result<Self> {
        let mut p = Self::new(hidden, window, 0)?;
        p.store.load(path, CHECKPOINT_FORMAT)?;
        Ok(p)
    }

    /// Predicts where the vehicle will be `steps` seconds after its last
    /// observation. `planned_path` is the path broadcast with that
    /// observation (nearest node first); `steps = 0` returns the last
    /// position unchanged.
    pub fn rollout(
        &self,
        map: &RoadNetwork,
        history: &[Observation],
        planned_path: &[NodeId],
        steps: usize,
    ) -> Result<Point> {
        let Some(last) = history.last() else {
            return Err(Error::Parameter("rollout needs at least one observation".into()));
        };
        if steps == 0 {
            return Ok(last.position);
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false)?;
        let window = self.padded_window(history);
        let mut h = tape.constant(Tensor::zeros(1, self.hidden))?;
        let mut prev = window[0].position;
        for obs in &window {
            let x = tape.constant(self.features(map, prev, obs.position, obs.next)?)?;
            h = gru_step(&mut tape, &bound, &self.gru, x, h)?;
            prev = obs.position;
        }
        let mut cursor = PathCursor::new(planned_path, last.next);
        let mut cur = last.position;
        let mut prev = window.len().checked_sub(2).map_or(cur, |i| window[i].position);
        for step in 0..steps {
            if step > 0 {
                let x = tape.constant(self.features(map, prev, cur, cursor.next_two())?)?;
                h = gru_step(&mut tape, &bound, &self.gru, x, h)?;
            }
            let out = dense(&mut tape, &bound, &self.head, h)?;
            let d = tape.value(out);
            let raw = Point::new(cur.x + d.get(0, 0) * STEP_SCALE, cur.y + d.get(0, 1) * STEP_SCALE);
            let next = project_to_road(raw, map)?;
            cursor.advance(map, cur, next)?;
            prev = cur;
            cur = next;
        }
        Ok(cur)
    }

    fn padded_window(&self, history: &[Observation]) -> Vec<Observation> {
        let tail = &history[history.len().saturating_sub(self.window)..];
        let mut out = vec![tail[0]; self.window - tail.len()];
        out.extend_from_slice(tail);
        out
    }

    /// Translation-free GRU input: velocity over the last second and the
    /// offsets to the next two segment nodes.
    fn features(&self, map: &RoadNetwork, prev: Point, cur: Point, next: [NodeId; 2]) -> Result<Tensor> {
        let a = map.position(next[0])?;
        let b = map.position(next[1])?;
        Tensor::from_vec(
            1,
            INPUT_DIM,
            vec![
                (cur.x - prev.x) / STEP_SCALE,
                (cur.y - prev.y) / STEP_SCALE,
                (a.x - cur.x) / NODE_SCALE,
                (a.y - cur.y) / NODE_SCALE,
                (b.x - cur.x) / NODE_SCALE,
                (b.y - cur.y) / NODE_SCALE,
            ],
        )
    }

    /// Mean squared one-step error (in units of `STEP_SCALE²`) over a batch,
    /// recorded on `tape`.
    fn batch_loss(&self, tape: &mut Tape, bound: &Bound, map: &RoadNetwork, batch: &[&Sample]) -> Result<Var> {
        let b = batch.len();
        let mut h = tape.constant(Tensor::zeros(b, self.hidden))?;
        let windows: Vec<Vec<Observation>> = batch.iter().map(|s| self.padded_window(&s.history)).collect();
        for k in 0..self.window {
            let mut rows = Vec::with_capacity(b * INPUT_DIM);
            for w in &windows {
                let prev = w[k.saturating_sub(1)].position;
                rows.extend_from_slice(self.features(map, prev, w[k].position, w[k].next)?.data());
            }
            let x = tape.constant(Tensor::from_vec(b, INPUT_DIM, rows)?)?;
            h = gru_step(tape, bound, &self.gru, x, h)?;
        }
        let out = dense(tape, bound, &self.head, h)?;
        let disp = tape.scale(out, STEP_SCALE)?;
        let last: Vec<f64> = windows
            .iter()
            .flat_map(|w| {
                let p = w[w.len() - 1].position;
                [p.x, p.y]
            })
            .collect();
        let last = tape.constant(Tensor::from_vec(b, 2, last)?)?;
        let raw = tape.add(last, disp)?;
        let projected = project_rows(tape, raw, map)?;
        let target: Vec<f64> = batch.iter().flat_map(|s| [s.target.x, s.target.y]).collect();
        let target = tape.constant(Tensor::from_vec(b, 2, target)?)?;
        let err = tape.sub(projected, target)?;
        let err = tape.scale(err, 1.0 / STEP_SCALE)?;
        let sq = tape.mul(err, err)?;
        let total = tape.sum(sq)?;
        tape.scale(total, 1.0 / b as f64)
    }
}

/// Walks the planned path as the predicted position passes segment nodes.
struct PathCursor<'a> {
    path: &'a [NodeId],
    idx: usize,
    fallback: [NodeId; 2],
}

impl<'a> PathCursor<'a> {
    fn new(path: &'a [NodeId], next: [NodeId; 2]) -> Self {
        let idx = path.iter().position(|&n| n == next[0]).unwrap_or(path.len());
        Self {
            path,
            idx,
            fallback: next,
        }
    }

    fn next_two(&self) -> [NodeId; 2] {
        match (self.path.get(self.idx), self.path.get(self.idx + 1)) {
            (Some(&a), Some(&b)) => [a, b],
            (Some(&a), None) => [a, a],
            _ => self.fallback,
        }
    }

    /// A node counts as passed once the move from `from` to `to` reaches or
    /// crosses the line through it perpendicular to the approach direction.
    fn advance(&mut self, map: &RoadNetwork, from: Point, to: Point) -> Result<()> {
        let mut approach_from = from;
        while self.idx + 1 < self.path.len() {
            let node = map.position(self.path[self.idx])?;
            let (dx, dy) = (node.x - approach_from.x, node.y - approach_from.y);
            let along = (to.x - node.x) * dx + (to.y - node.y) * dy;
            if along < 0.0 && node.dist(to) > 1e-9 {
                break;
            }
            approach_from = node;
            self.idx += 1;
        }
        Ok(())
    }
}

/// A training or evaluation example: observations up to time `t`, and where
/// the vehicle was `horizon` seconds later.
#[derive(Debug, Clone)]
pub struct Sample {
    pub history: Vec<Observation>,
    pub planned_path: Vec<NodeId>,
    pub target: Point,
}

/// Builds samples whose target lies `horizon` seconds after the last
/// observation. Frames must be consecutive seconds.
pub fn collect_samples(frames: &[TraceFrame], window: usize, horizon: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    if horizon == 0 || window == 0 {
        return Err(Error::Parameter("sample window and horizon must be at least 1".into()));
    }
    for t in 0..frames.len().saturating_sub(horizon) {
        let later = &frames[t + horizon];
        if later.time_step != frames[t].time_step + horizon as i64 {
            continue;
        }
        for v in &frames[t].vehicles {
            let Some(target) = later.vehicle(v.vehicle_id) else { continue };
            let mut history = Vec::with_capacity(window);
            for back in (0..window.min(t + 1)).rev() {
                let f = &frames[t - back];
                if f.time_step != frames[t].time_step - back as i64 {
                    continue;
                }
                if let Some(old) = f.vehicle(v.vehicle_id) {
                    history.push(Observation::of(old)?);
                }
            }
            out.push(Sample {
                history,
                planned_path: v.planned_path.clone(),
                target: target.position,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorLogRow {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains on one-step-ahead samples from every `(map, frames)` pair, drawing
/// each batch from a single map in round-robin order.
pub fn train_predictor(
    data: &[(&RoadNetwork, &[TraceFrame])],
    cfg: &PredictorConfig,
) -> Result<(Predictor, Vec<PredictorLogRow>)> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Parameter("predictor training needs at least two maps".into()));
    }
    let mut predictor = Predictor::new(cfg.hidden, cfg.window, cfg.seed)?;
    let mut log = Vec::new();
    if cfg.epochs == 0 {
        return Ok((predictor, log));
    }
    let pools: Vec<Vec<Sample>> = data
        .iter()
        .map(|(_, frames)| collect_samples(frames, cfg.window, 1))
        .collect::<Result<_>>()?;
    if pools.iter().any(Vec::is_empty) {
        return Err(Error::Parameter("a training map has no usable trajectory samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a5f);
    let mut opt = Adam::new(predictor.store(), cfg.optimiser);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for step in 0..cfg.batches_per_epoch {
            let m = (epoch * cfg.batches_per_epoch + step) % data.len();
            let pool = &pools[m];
            let batch: Vec<&Sample> = (0..cfg.batch_size).map(|_| &pool[rng.gen_range(0..pool.len())]).collect();
            let mut tape = Tape::new();
            let bound = predictor.store.bind(&mut tape, true)?;
            let loss = predictor.batch_loss(&mut tape, &bound, data[m].0, &batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() || value > 1e6 {
                return Err(Error::TrainingFailure {
                    episode: epoch,
                    loss: value,
                    last_checkpoint: None,
                });
            }
            total += value;
            tape.backward(loss)?;
            opt.step(predictor.store_mut(), bound.grads(&tape));
        }
        log.push(PredictorLogRow {
            epoch,
            loss: total / cfg.batches_per_epoch as f64,
        });
    }
    Ok((predictor, log))
}

/// Mean prediction error per missing-steps bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBucket {
    pub missing_steps: usize,
    pub count: usize,
    pub mean_error_m: f64,
    /// Largest distance from a prediction to the road network.
    pub max_off_road_m: f64,
}

/// Rolls the predictor `k` steps for `k = 1..=max_steps` over up to
/// `samples_per_bucket` randomly chosen samples each.
pub fn evaluate_predictor(
    predictor: &Predictor,
    map: &RoadNetwork,
    frames: &[TraceFrame],
    max_steps: usize,
    samples_per_bucket: usize,
    seed: u64,
) -> Result<Vec<ErrorBucket>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(max_steps);
    for k in 1..=max_steps {
        let mut samples = collect_samples(frames, predictor.window(), k)?;
        samples.shuffle(&mut rng);
        samples.truncate(samples_per_bucket);
        let mut total = 0.0;
        let mut off = 0.0f64;
        for s in &samples {
            let p = predictor.rollout(map, &s.history, &s.planned_path, k)?;
            total += p.dist(s.target);
            off = off.max(map.distance_to_network(p).0);
        }
        out.push(ErrorBucket {
            missing_steps: k,
            count: samples.len(),
            mean_error_m: if samples.is_empty() { 0.0 } else { total / samples.len() as f64 },
            max_off_road_m: off,
        });
    }
    Ok(out)
}

pub fn write_error_report(path: &Path, buckets: &[ErrorBucket]) -> Result<()> {
    let mut text = String::from("missing_steps,count,mean_error_m\n");
    for b in buckets {
        let _ = writeln!(text, "{},{},{}", b.missing_steps, b.count, b.mean_error_m);
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
