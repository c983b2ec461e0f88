//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and enough information to push gradients back to its inputs. Node ids
//! are assigned in creation order, so a reverse sweep over ids is a valid
//! reverse topological order.

mod adam;
pub mod gradcheck;
mod params;

pub use adam::AdamState;
pub use params::ParamSet;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Elu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Row-wise log-sum-exp, n×m → n×1.
    LogSumExpRows,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Binary(Binary, Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Scale(Tensor, f64),
    Activation(Activation, Tensor),
    RowL2Normalize { x: Tensor, norms: Array1<f64> },
    Reduce(Reduction, Tensor),
    PairwiseDistance(Tensor),
    ScalarMinus(Tensor, Tensor),
    SetDiagonal(Tensor),
    SymNormalize { a: Tensor, inv_sqrt_deg: Array1<f64> },
    BceWithLogits { scores: Tensor, labels: Vec<f64> },
    CoxPartialNll { risks: Tensor, order: Vec<usize>, times: Vec<f64>, events: Vec<bool> },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Guard for [`Graph::row_l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Tensor)>,
    backward_done: bool,
}

fn check_finite(value: &Array2<f64>, op: &str) -> Result<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool, name: &str) -> Result<Tensor> {
        check_finite(&value, name)?;
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Tensor(self.nodes.len() - 1))
    }

    fn needs(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Tensor> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// A leaf that receives a gradient in [`Graph::backward`].
    pub fn variable(&mut self, value: Array2<f64>) -> Result<Tensor> {
        self.push(value, Op::Leaf, true, "variable")
    }

    /// Register the named parameter from `params` as a trainable leaf.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Tensor> {
        if let Some((_, t)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*t);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter {name}")))?
            .clone();
        let t = self.variable(value)?;
        self.params.push((name.to_string(), t));
        Ok(t)
    }

    pub fn value(&self, t: Tensor) -> &Array2<f64> {
        &self.nodes[t.0].value
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.0].value[[0, 0]]
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.0].value.dim()
    }

    pub fn grad(&self, t: Tensor) -> Option<&Array2<f64>> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {n}x{k} by {k2}x{m}")));
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.needs(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn binary(&mut self, op: Binary, a: Tensor, b: Tensor) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op:?} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let value = match op {
            Binary::Add => va + vb,
            Binary::Sub => va - vb,
            Binary::Mul => va * vb,
        };
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Binary(op, a, b), rg, "elementwise")
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Mul, a, b)
    }

    /// `a + 1ᵀ·row`: adds a 1×m bias row to every row of an n×m tensor.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        let (_, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(Error::shape(format!(
                "bias {:?} does not match {} columns",
                self.shape(row),
                m
            )));
        }
        let value = self.value(a) + self.value(row);
        let rg = self.needs(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg, "add_row")
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        let value = self.value(a) * c;
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, c), rg, "scale")
    }

    pub fn activation(&mut self, act: Activation, a: Tensor) -> Result<Tensor> {
        let f: fn(f64) -> f64 = match act {
            Activation::Relu => |x| x.max(0.0),
            Activation::Elu => elu,
            Activation::Sigmoid => sigmoid,
        };
        let value = self.value(a).mapv(f);
        let rg = self.needs(&[a]);
        self.push(value, Op::Activation(act, a), rg, "activation")
    }

    pub fn relu(&mut self, a: Tensor) -> Result<Tensor> {
        self.activation(Activation::Relu, a)
    }

    pub fn elu(&mut self, a: Tensor) -> Result<Tensor> {
        self.activation(Activation::Elu, a)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Result<Tensor> {
        self.activation(Activation::Sigmoid, a)
    }

    /// Divide each row by `max(‖row‖₂, 1e-12)`.
    pub fn row_l2_normalize(&mut self, x: Tensor) -> Result<Tensor> {
        let v = self.value(x);
        let norms: Array1<f64> = v
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt().max(NORM_EPS))
            .collect();
        let value = v / &norms.view().insert_axis(Axis(1));
        let rg = self.needs(&[x]);
        self.push(value, Op::RowL2Normalize { x, norms }, rg, "row_l2_normalize")
    }

    pub fn reduce(&mut self, op: Reduction, x: Tensor) -> Result<Tensor> {
        let v = self.value(x);
        let value = match op {
            Reduction::Sum => Array2::from_elem((1, 1), v.sum()),
            Reduction::Mean => {
                if v.is_empty() {
                    return Err(Error::shape("mean of empty tensor"));
                }
                Array2::from_elem((1, 1), v.sum() / v.len() as f64)
            }
            Reduction::LogSumExpRows => {
                let out: Vec<f64> = v.rows().into_iter().map(|r| logsumexp(r.iter().copied())).collect();
                Array2::from_shape_vec((v.nrows(), 1), out).expect("row count")
            }
        };
        let rg = self.needs(&[x]);
        self.push(value, Op::Reduce(op, x), rg, "reduce")
    }

    pub fn sum(&mut self, x: Tensor) -> Result<Tensor> {
        self.reduce(Reduction::Sum, x)
    }

    pub fn mean(&mut self, x: Tensor) -> Result<Tensor> {
        self.reduce(Reduction::Mean, x)
    }

    /// Sum of squared entries.
    pub fn sum_squares(&mut self, x: Tensor) -> Result<Tensor> {
        let sq = self.mul(x, x)?;
        self.sum(sq)
    }

    /// Euclidean distances between all pairs of rows, n×d → n×n.
    pub fn pairwise_distance(&mut self, z: Tensor) -> Result<Tensor> {
        let v = self.value(z);
        let n = v.nrows();
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = v
                    .row(i)
                    .iter()
                    .zip(v.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                d[[i, j]] = dist;
                d[[j, i]] = dist;
            }
        }
        let rg = self.needs(&[z]);
        self.push(d, Op::PairwiseDistance(z), rg, "pairwise_distance")
    }

    /// `t − x` with `t` a 1×1 tensor broadcast over `x`.
    pub fn scalar_minus(&mut self, t: Tensor, x: Tensor) -> Result<Tensor> {
        if self.shape(t) != (1, 1) {
            return Err(Error::shape("scalar_minus expects a 1x1 scalar"));
        }
        let s = self.scalar(t);
        let value = self.value(x).mapv(|v| s - v);
        let rg = self.needs(&[t, x]);
        self.push(value, Op::ScalarMinus(t, x), rg, "scalar_minus")
    }

    /// Copy of a square tensor with the diagonal overwritten by `value`;
    /// no gradient flows through diagonal entries.
    pub fn set_diagonal(&mut self, a: Tensor, value: f64) -> Result<Tensor> {
        let (n, m) = self.shape(a);
        if n != m {
            return Err(Error::shape(format!("set_diagonal on {n}x{m}")));
        }
        let mut out = self.value(a).clone();
        out.diag_mut().fill(value);
        let rg = self.needs(&[a]);
        self.push(out, Op::SetDiagonal(a), rg, "set_diagonal")
    }

    /// `D^{-1/2} A D^{-1/2}` with `D = diag(row sums of A)`.
    pub fn sym_normalize(&mut self, a: Tensor) -> Result<Tensor> {
        let (n, m) = self.shape(a);
        if n != m {
            return Err(Error::shape(format!("adjacency must be square, got {n}x{m}")));
        }
        let v = self.value(a);
        let deg = v.sum_axis(Axis(1));
        if let Some(i) = deg.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::invalid(format!("node {i} has zero degree")));
        }
        let s = deg.mapv(|d| 1.0 / d.sqrt());
        let value = Array2::from_shape_fn((n, n), |(i, j)| v[[i, j]] * s[i] * s[j]);
        let rg = self.needs(&[a]);
        self.push(value, Op::SymNormalize { a, inv_sqrt_deg: s }, rg, "sym_normalize")
    }

    /// Mean binary cross-entropy of sigmoid(scores) against 0/1 labels,
    /// evaluated as softplus to stay finite for large scores.
    pub fn bce_with_logits(&mut self, scores: Tensor, labels: &[u8]) -> Result<Tensor> {
        let (n, c) = self.shape(scores);
        if c != 1 || n != labels.len() {
            return Err(Error::shape(format!("bce: scores {n}x{c}, {} labels", labels.len())));
        }
        if n == 0 {
            return Err(Error::shape("bce on empty batch"));
        }
        let labels: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let s = self.value(scores);
        let loss = s
            .iter()
            .zip(&labels)
            .map(|(&s, &y)| if y > 0.5 { softplus(-s) } else { softplus(s) })
            .sum::<f64>()
            / n as f64;
        let rg = self.needs(&[scores]);
        self.push(Array2::from_elem((1, 1), loss), Op::BceWithLogits { scores, labels }, rg, "bce")
    }

    /// Average negative log partial likelihood of the risk scores (n×1),
    /// with risk sets `{j : T_j ≥ T_i}` and Breslow handling of ties.
    pub fn cox_partial_nll(&mut self, risks: Tensor, times: &[f64], events: &[bool]) -> Result<Tensor> {
        let (n, c) = self.shape(risks);
        if c != 1 || n != times.len() || n != events.len() {
            return Err(Error::shape(format!(
                "cox loss: risks {n}x{c}, {} times, {} events",
                times.len(),
                events.len()
            )));
        }
        let n_events = events.iter().filter(|e| **e).count();
        if n_events == 0 {
            return Err(Error::NoEvents);
        }
        let h: Vec<f64> = self.value(risks).iter().copied().collect();
        let order = descending_time_order(times);
        let log_risk_sets = risk_set_logsumexp(&h, times, &order);
        let loss = -(0..n)
            .filter(|&i| events[i])
            .map(|i| h[i] - log_risk_sets[i])
            .sum::<f64>()
            / n_events as f64;
        let rg = self.needs(&[risks]);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CoxPartialNll {
                risks,
                order,
                times: times.to_vec(),
                events: events.to_vec(),
            },
            rg,
            "cox_partial_nll",
        )
    }

    /// Populate gradients of `loss` (a 1×1 tensor) with respect to every
    /// node that requires one. A graph can be swept only once.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph("backward already run on this graph; rebuild the forward pass".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            for (parent, pg) in self.local_grads(id, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each of its inputs.
    fn local_grads(&self, id: usize, g: &Array2<f64>) -> Vec<(Tensor, Array2<f64>)> {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].requires_grad {
                    out.push((*a, g.dot(&vb.t())));
                }
                if self.nodes[b.0].requires_grad {
                    out.push((*b, va.t().dot(g)));
                }
                out
            }
            Op::Binary(op, a, b) => match op {
                Binary::Add => vec![(*a, g.clone()), (*b, g.clone())],
                Binary::Sub => vec![(*a, g.clone()), (*b, -g)],
                Binary::Mul => vec![(*a, g * self.value(*b)), (*b, g * self.value(*a))],
            },
            Op::AddRow(a, row) => vec![(*a, g.clone()), (*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            Op::Scale(a, c) => vec![(*a, g * *c)],
            Op::Activation(act, a) => {
                let x = self.value(*a);
                let local = match act {
                    Activation::Relu => x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                    Activation::Elu => x.mapv(|v| if v > 0.0 { 1.0 } else { v.exp() }),
                    Activation::Sigmoid => y.mapv(|s| s * (1.0 - s)),
                };
                vec![(*a, g * &local)]
            }
            Op::RowL2Normalize { x, norms } => {
                let xv = self.value(*x);
                let mut out = Array2::zeros(xv.raw_dim());
                for i in 0..xv.nrows() {
                    let n = norms[i];
                    let gi = g.row(i);
                    let raw = xv.row(i).dot(&xv.row(i)).sqrt();
                    if raw > NORM_EPS {
                        let yi = y.row(i);
                        let proj = yi.dot(&gi);
                        for j in 0..xv.ncols() {
                            out[[i, j]] = (gi[j] - yi[j] * proj) / n;
                        }
                    } else {
                        for j in 0..xv.ncols() {
                            out[[i, j]] = gi[j] / n;
                        }
                    }
                }
                vec![(*x, out)]
            }
            Op::Reduce(op, x) => {
                let xv = self.value(*x);
                let g0 = g[[0, 0]];
                let local = match op {
                    Reduction::Sum => Array2::from_elem(xv.raw_dim(), g0),
                    Reduction::Mean => Array2::from_elem(xv.raw_dim(), g0 / xv.len() as f64),
                    Reduction::LogSumExpRows => {
                        Array2::from_shape_fn(xv.raw_dim(), |(i, j)| g[[i, 0]] * (xv[[i, j]] - y[[i, 0]]).exp())
                    }
                };
                vec![(*x, local)]
            }
            Op::PairwiseDistance(z) => {
                let zv = self.value(*z);
                let n = zv.nrows();
                let mut out = Array2::zeros(zv.raw_dim());
                for i in 0..n {
                    for j in 0..n {
                        let d = y[[i, j]];
                        if i == j || d <= 0.0 {
                            continue;
                        }
                        let w = g[[i, j]] / d;
                        for c in 0..zv.ncols() {
                            let diff = zv[[i, c]] - zv[[j, c]];
                            out[[i, c]] += w * diff;
                            out[[j, c]] -= w * diff;
                        }
                    }
                }
                vec![(*z, out)]
            }
            Op::ScalarMinus(t, x) => vec![(*t, Array2::from_elem((1, 1), g.sum())), (*x, -g)],
            Op::SetDiagonal(a) => {
                let mut out = g.clone();
                out.diag_mut().fill(0.0);
                vec![(*a, out)]
            }
            Op::SymNormalize { a, inv_sqrt_deg: s } => {
                let av = self.value(*a);
                let n = av.nrows();
                // dL/dd_m collects the dependence of every N_ij on the degrees.
                let mut d_deg = Array1::<f64>::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        let gy = g[[i, j]] * y[[i, j]];
                        d_deg[i] -= 0.5 * gy * s[i] * s[i];
                        d_deg[j] -= 0.5 * gy * s[j] * s[j];
                    }
                }
                let out = Array2::from_shape_fn((n, n), |(k, l)| g[[k, l]] * s[k] * s[l] + d_deg[k]);
                vec![(*a, out)]
            }
            Op::BceWithLogits { scores, labels } => {
                let s = self.value(*scores);
                let n = labels.len() as f64;
                let g0 = g[[0, 0]];
                let out = Array2::from_shape_fn(s.raw_dim(), |(i, _)| g0 * (sigmoid(s[[i, 0]]) - labels[i]) / n);
                vec![(*scores, out)]
            }
            Op::CoxPartialNll {
                risks,
                order,
                times,
                events,
            } => {
                let h: Vec<f64> = self.value(*risks).iter().copied().collect();
                let n_events = events.iter().filter(|e| **e).count() as f64;
                let lse = risk_set_logsumexp(&h, times, order);
                // For patient k: Σ over events i with T_i ≤ T_k of exp(h_k − lse_i).
                // Walk ascending time; accumulate exp(−lse_i) over tied groups.
                let n = h.len();
                let mut acc = vec![0.0; n];
                let mut running = 0.0;
                let mut pos = n;
                while pos > 0 {
                    let t = times[order[pos - 1]];
                    let mut start = pos;
                    while start > 0 && times[order[start - 1]] == t {
                        start -= 1;
                    }
                    for &i in &order[start..pos] {
                        if events[i] {
                            running += (-lse[i]).exp();
                        }
                    }
                    for &k in &order[start..pos] {
                        acc[k] = running;
                    }
                    pos = start;
                }
                let g0 = g[[0, 0]];
                let out = Array2::from_shape_fn((n, 1), |(k, _)| {
                    let e = if events[k] { 1.0 } else { 0.0 };
                    -g0 * (e - h[k].exp() * acc[k]) / n_events
                });
                vec![(*risks, out)]
            }
        }
    }

    /// Tensors of the parameters registered so far, in registration order.
    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| *t).collect()
    }

    /// Gradients of registered parameters, by name. Call after [`Graph::backward`].
    pub fn param_grads(&self) -> Vec<(String, Array2<f64>)> {
        self.params
            .iter()
            .map(|(name, t)| {
                let g = self.nodes[t.0]
                    .grad
                    .clone()
                    .unwrap_or_else(|| Array2::zeros(self.nodes[t.0].value.raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }

    /// Copy parameter gradients into `params` so an optimizer can use them.
    pub fn write_grads(&self, params: &mut ParamSet) -> Result<()> {
        if !self.backward_done {
            return Err(Error::Graph("write_grads before backward".into()));
        }
        for (name, g) in self.param_grads() {
            params.set_grad(&name, g)?;
        }
        Ok(())
    }
}

/// Indices sorted by decreasing time; ties keep index order.
fn descending_time_order(times: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
    order
}

/// `log Σ_{j : T_j ≥ T_i} exp(h_j)` for every i, given the descending order.
fn risk_set_logsumexp(h: &[f64], times: &[f64], order: &[usize]) -> Vec<f64> {
    let n = h.len();
    let shift = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; n];
    let mut cum = 0.0;
    let mut pos = 0;
    while pos < n {
        let t = times[order[pos]];
        let mut end = pos;
        while end < n && times[order[end]] == t {
            cum += (h[order[end]] - shift).exp();
            end += 1;
        }
        let v = cum.ln() + shift;
        for &i in &order[pos..end] {
            out[i] = v;
        }
        pos = end;
    }
    out
}

pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests;
