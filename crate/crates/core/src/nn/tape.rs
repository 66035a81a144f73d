//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to a [`Tape`]; [`Tape::backward`] walks the
//! tape in reverse and accumulates gradients into the leaves that were
//! created with `requires_grad`. Repeated backward calls accumulate.

use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    PadRows(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    NeighbourMean(Var, Arc<Vec<Vec<usize>>>),
    RowJacobian(Var, Vec<[f64; 4]>),
    Pick(Var, Vec<(usize, usize)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    is_param: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // accumulated gradients of `requires_grad` leaves
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric("leaf input".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
            is_param: requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a `requires_grad` leaf, if any backward pass
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(name.into()));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            is_param: false,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds the `1 × m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, m] = self.shape(a);
        if self.shape(b) != [1, m] {
            return Err(Error::Shape(format!(
                "add_row: {n}x{m} with bias {:?}",
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for row in out.data_mut().chunks_mut(m.max(1)) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, b), &[a, b], "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        self.push(out, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a], "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.push(out, Op::AddScalar(a), &[a], "add_scalar")
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), &[a], "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a], "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a], "sigmoid")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a), &[a], "softmax_rows")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a], "transpose")
    }

    /// Gathers rows of `a` in the given order (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let [n, m] = src.shape();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Shape(format!("select_rows: row {bad} of {n}")));
        }
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let out = Tensor::from_vec(rows.len(), m, data)?;
        self.push(out, Op::SelectRows(a, rows.to_vec()), &[a], "select_rows")
    }

    /// Appends zero rows until `a` has `total` rows.
    pub fn pad_rows(&mut self, a: Var, total: usize) -> Result<Var> {
        let src = self.value(a);
        let [n, m] = src.shape();
        if n > total {
            return Err(Error::Shape(format!("pad_rows: {n} rows exceed {total}")));
        }
        let mut data = src.data().to_vec();
        data.resize(total * m, 0.0);
        let out = Tensor::from_vec(total, m, data)?;
        self.push(out, Op::PadRows(a), &[a], "pad_rows")
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = Tensor::from_vec(rows, cols, self.value(a).data().to_vec())?;
        self.push(out, Op::Reshape(a), &[a], "reshape")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat_cols of nothing".into()));
        };
        let n = self.shape(first)[0];
        if parts.iter().any(|&p| self.shape(p)[0] != n) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(n, total, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        self.push(out, Op::Mean(a), &[a], "mean")
    }

    /// Row `i` of the result is the mean of the rows of `a` listed in
    /// `neighbours[i]`, or zeros when the list is empty. Rows are summed in
    /// lexicographic order of their values, so the result does not depend on
    /// how the rows of `a` are numbered.
    pub fn neighbour_mean(&mut self, a: Var, neighbours: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let src = self.value(a);
        let [n, m] = src.shape();
        if neighbours.len() != n {
            return Err(Error::Shape(format!(
                "neighbour_mean: {} lists for {n} rows",
                neighbours.len()
            )));
        }
        if neighbours.iter().flatten().any(|&j| j >= n) {
            return Err(Error::Shape("neighbour_mean: index out of range".into()));
        }
        let mut out = Tensor::zeros(n, m);
        let mut order = Vec::new();
        for (i, list) in neighbours.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            order.clear();
            order.extend_from_slice(list);
            order.sort_by(|&x, &y| {
                src.row(x)
                    .iter()
                    .zip(src.row(y))
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let inv = 1.0 / list.len() as f64;
            let o_row = &mut out.data_mut()[i * m..(i + 1) * m];
            for &j in &order {
                for (o, v) in o_row.iter_mut().zip(src.row(j)) {
                    *o += v;
                }
            }
            for o in o_row.iter_mut() {
                *o *= inv;
            }
        }
        self.push(out, Op::NeighbourMean(a, neighbours), &[a], "neighbour_mean")
    }

    /// Records an externally computed map on `n × 2` rows whose local
    /// derivative is the per-row 2×2 Jacobian `[d0/dx, d0/dy, d1/dx, d1/dy]`.
    pub fn row_jacobian(&mut self, a: Var, value: Tensor, jacobians: Vec<[f64; 4]>) -> Result<Var> {
        let [n, m] = self.shape(a);
        if m != 2 || value.shape() != [n, 2] || jacobians.len() != n {
            return Err(Error::Shape("row_jacobian expects n x 2 rows with n jacobians".into()));
        }
        self.push(value, Op::RowJacobian(a, jacobians), &[a], "row_jacobian")
    }

    /// Collects single entries `(row, col)` of `a` into a `k × 1` column.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Result<Var> {
        let src = self.value(a);
        let [n, m] = src.shape();
        if at.iter().any(|&(r, c)| r >= n || c >= m) {
            return Err(Error::Shape("pick: position out of range".into()));
        }
        let data = at.iter().map(|&(r, c)| src.get(r, c)).collect();
        let out = Tensor::from_vec(at.len(), 1, data)?;
        self.push(out, Op::Pick(a, at.to_vec()), &[a], "pick")
    }

    /// Back-propagates from the scalar `loss`, adding into the gradients of
    /// every reachable `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if node.is_param {
                match &mut self.grads[idx] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let mut send = |v: Var, delta: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].needs_grad {
                    send(*a, g.matmul_t(val(*b)));
                }
                if nodes[b.0].needs_grad {
                    send(*b, val(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                send(*a, g.clone());
                let [_, m] = g.shape();
                let mut col = vec![0.0; m];
                for row in g.data().chunks(m.max(1)) {
                    for (c, v) in col.iter_mut().zip(row) {
                        *c += v;
                    }
                }
                send(*b, Tensor::row_vector(col));
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                send(*a, zip(g, val(*b), |x, y| x * y));
                send(*b, zip(g, val(*a), |x, y| x * y));
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Relu(a) => send(*a, zip(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Tanh(a) => send(*a, zip(g, &node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(a) => send(*a, zip(g, &node.value, |gv, y| gv * y * (1.0 - y))),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let [n, m] = y.shape();
                let mut out = Tensor::zeros(n, m);
                for r in 0..n {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..m {
                        out.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                send(*a, out);
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::SelectRows(a, rows) => {
                let [n, m] = val(*a).shape();
                let mut out = Tensor::zeros(n, m);
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..m {
                        let cur = out.get(r, c);
                        out.set(r, c, cur + g.get(k, c));
                    }
                }
                send(*a, out);
            }
            Op::PadRows(a) => {
                let [n, m] = val(*a).shape();
                send(*a, Tensor::from_vec(n, m, g.data()[..n * m].to_vec()).expect("prefix"));
            }
            Op::Reshape(a) => {
                let [n, m] = val(*a).shape();
                send(*a, Tensor::from_vec(n, m, g.data().to_vec()).expect("same size"));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [n, m] = val(p).shape();
                    let mut out = Tensor::zeros(n, m);
                    for r in 0..n {
                        for c in 0..m {
                            out.set(r, c, g.get(r, offset + c));
                        }
                    }
                    offset += m;
                    send(p, out);
                }
            }
            Op::Sum(a) => {
                let [n, m] = val(*a).shape();
                send(*a, Tensor::full(n, m, g.item()));
            }
            Op::Mean(a) => {
                let [n, m] = val(*a).shape();
                send(*a, Tensor::full(n, m, g.item() / (n * m).max(1) as f64));
            }
            Op::NeighbourMean(a, lists) => {
                let [n, m] = val(*a).shape();
                let mut out = Tensor::zeros(n, m);
                for (i, list) in lists.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / list.len() as f64;
                    for &j in list {
                        for c in 0..m {
                            let cur = out.get(j, c);
                            out.set(j, c, cur + g.get(i, c) * inv);
                        }
                    }
                }
                send(*a, out);
            }
            Op::RowJacobian(a, jac) => {
                let n = jac.len();
                let mut out = Tensor::zeros(n, 2);
                for (r, j) in jac.iter().enumerate() {
                    let (gx, gy) = (g.get(r, 0), g.get(r, 1));
                    out.set(r, 0, j[0] * gx + j[2] * gy);
                    out.set(r, 1, j[1] * gx + j[3] * gy);
                }
                send(*a, out);
            }
            Op::Pick(a, at) => {
                let [n, m] = val(*a).shape();
                let mut out = Tensor::zeros(n, m);
                for (k, &(r, c)) in at.iter().enumerate() {
                    let cur = out.get(r, c);
                    out.set(r, c, cur + g.get(k, 0));
                }
                send(*a, out);
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let [n, m] = x.shape();
    let mut out = Tensor::zeros(n, m);
    for r in 0..n {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (c, e) in exps.into_iter().enumerate() {
            out.set(r, c, e / total);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(1, 2, vec![2.0, -3.0]).unwrap()).unwrap();
        let w = t.param(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let y = t.matmul(x, w).unwrap();
        let loss = t.sum(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap().data(), &[2.0, 2.0, -3.0, -3.0]);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap().data(), &[4.0, 4.0, -6.0, -6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(t.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn softmax_closed_form() {
        let s = softmax_rows(&Tensor::from_vec(1, 2, vec![0.0, 3f64.ln()]).unwrap());
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let mut t = Tape::new();
        assert!(matches!(t.constant(Tensor::scalar(f64::NAN)), Err(Error::Numeric(_))));
    }
}
