//! Layer forwards recorded on a [`Tape`]. Parameters live in a
//! [`ParamStore`]; each layer keeps the ids of its tensors.

use std::sync::Arc;

use rand::Rng;

use super::{Bound, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseParams {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl DenseParams {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: store.xavier(format!("{name}.w"), d_in, d_out, rng),
            b: store.zeros(format!("{name}.b"), 1, d_out),
            d_in,
            d_out,
        }
    }
}

/// `x · W + b`.
pub fn dense(tape: &mut Tape, bound: &Bound, p: &DenseParams, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, bound.var(p.w))?;
    tape.add_row(xw, bound.var(p.b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SageLayerParams {
    pub w_self: ParamId,
    pub w_neigh: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl SageLayerParams {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_self: store.xavier(format!("{name}.w_self"), d_in, d_out, rng),
            w_neigh: store.xavier(format!("{name}.w_neigh"), d_in, d_out, rng),
            bias: store.zeros(format!("{name}.b"), 1, d_out),
            d_in,
            d_out,
        }
    }
}

/// Mean-aggregator GraphSAGE layer:
/// `relu(x_i · W_self + mean_{j ∈ N(i)} x_j · W_neigh + b)`, with the mean of
/// an isolated node taken as zero.
pub fn graphsage_layer(
    tape: &mut Tape,
    bound: &Bound,
    p: &SageLayerParams,
    x: Var,
    neighbours: Arc<Vec<Vec<usize>>>,
) -> Result<Var> {
    let own = tape.matmul(x, bound.var(p.w_self))?;
    let mean = tape.neighbour_mean(x, neighbours)?;
    let agg = tape.matmul(mean, bound.var(p.w_neigh))?;
    let sum = tape.add(own, agg)?;
    let pre = tape.add_row(sum, bound.var(p.bias))?;
    tape.relu(pre)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams {
    /// `(W_q, W_k, W_v)` per head, each `d_in × d_h / heads`.
    pub heads: Vec<(ParamId, ParamId, ParamId)>,
    pub d_in: usize,
    pub d_h: usize,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_h: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_h.is_multiple_of(heads) {
            return Err(Error::Parameter(format!(
                "attention width {d_h} is not divisible into {heads} heads"
            )));
        }
        let d_head = d_h / heads;
        let heads = (0..heads)
            .map(|h| {
                (
                    store.xavier(format!("{name}.h{h}.w_q"), d_in, d_head, rng),
                    store.xavier(format!("{name}.h{h}.w_k"), d_in, d_head, rng),
                    store.xavier(format!("{name}.h{h}.w_v"), d_in, d_head, rng),
                )
            })
            .collect();
        Ok(Self { heads, d_in, d_h })
    }
}

/// `softmax(Q Kᵀ / sqrt(d)) V` with queries from `s` and keys and values from
/// `s_ctx`; heads are concatenated column-wise.
pub fn cross_attention(tape: &mut Tape, bound: &Bound, p: &AttentionParams, s: Var, s_ctx: Var) -> Result<Var> {
    let [n, d] = tape.shape(s);
    let [m, d_ctx] = tape.shape(s_ctx);
    if n == 0 || m == 0 {
        return Err(Error::Shape("cross-attention needs at least one query and one key".into()));
    }
    if d != d_ctx || d != p.d_in {
        return Err(Error::Shape(format!(
            "cross-attention inputs {d} and {d_ctx} wide, parameters expect {}",
            p.d_in
        )));
    }
    let d_head = p.d_h / p.heads.len();
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut outs = Vec::with_capacity(p.heads.len());
    for &(wq, wk, wv) in &p.heads {
        let q = tape.matmul(s, bound.var(wq))?;
        let k = tape.matmul(s_ctx, bound.var(wk))?;
        let v = tape.matmul(s_ctx, bound.var(wv))?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, scale)?;
        let weights = tape.softmax_rows(scaled)?;
        outs.push(tape.matmul(weights, v)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// GRU cell weights: input-side `W_i*` (`d_in × h`), hidden-side `W_h*`
/// (`h × h`) and biases for the reset, update and candidate gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_in: ParamId,
    pub b_hn: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_ir: store.xavier(format!("{name}.w_ir"), d_in, hidden, rng),
            w_iz: store.xavier(format!("{name}.w_iz"), d_in, hidden, rng),
            w_in: store.xavier(format!("{name}.w_in"), d_in, hidden, rng),
            w_hr: store.xavier(format!("{name}.w_hr"), hidden, hidden, rng),
            w_hz: store.xavier(format!("{name}.w_hz"), hidden, hidden, rng),
            w_hn: store.xavier(format!("{name}.w_hn"), hidden, hidden, rng),
            b_r: store.zeros(format!("{name}.b_r"), 1, hidden),
            b_z: store.zeros(format!("{name}.b_z"), 1, hidden),
            b_in: store.zeros(format!("{name}.b_in"), 1, hidden),
            b_hn: store.zeros(format!("{name}.b_hn"), 1, hidden),
            d_in,
            hidden,
        }
    }
}

/// One GRU step on a batch of rows:
///
/// ```text
/// r  = σ(x W_ir + h W_hr + b_r)
/// z  = σ(x W_iz + h W_hz + b_z)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
pub fn gru_step(tape: &mut Tape, bound: &Bound, p: &GruParams, x: Var, h: Var) -> Result<Var> {
    let [bx, dx] = tape.shape(x);
    let [bh, dh] = tape.shape(h);
    if bx != bh || dx != p.d_in || dh != p.hidden {
        return Err(Error::Shape(format!(
            "gru_step: x {bx}x{dx}, h {bh}x{dh}, expected width {} and hidden {}",
            p.d_in, p.hidden
        )));
    }
    let gate = |tape: &mut Tape, wi: ParamId, wh: ParamId, b: ParamId| -> Result<Var> {
        let xi = tape.matmul(x, bound.var(wi))?;
        let hh = tape.matmul(h, bound.var(wh))?;
        let s = tape.add(xi, hh)?;
        let pre = tape.add_row(s, bound.var(b))?;
        tape.sigmoid(pre)
    };
    let r = gate(tape, p.w_ir, p.w_hr, p.b_r)?;
    let z = gate(tape, p.w_iz, p.w_hz, p.b_z)?;
    let xn = tape.matmul(x, bound.var(p.w_in))?;
    let xn = tape.add_row(xn, bound.var(p.b_in))?;
    let hn = tape.matmul(h, bound.var(p.w_hn))?;
    let hn = tape.add_row(hn, bound.var(p.b_hn))?;
    let rhn = tape.mul(r, hn)?;
    let pre_n = tape.add(xn, rhn)?;
    let n = tape.tanh(pre_n)?;
    let keep = tape.one_minus(z)?;
    let a = tape.mul(keep, n)?;
    let b = tape.mul(z, h)?;
    tape.add(a, b)
}
