//! Patient population graphs and the two graph networks built on them.
//!
//! PHGN projects patients into a latent space, links every patient to its k
//! nearest latent neighbors with one hyperedge and runs two hypergraph
//! convolutions. LPNL learns a dense soft adjacency from latent distances
//! and runs two graph convolutions through it. Both end in a two-layer
//! head producing one raw score per patient: a logit for classification or
//! a log-risk for the Cox head.

mod train;

pub use train::{train_network, Target, TrainConfig, TrainOutcome};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, ParamSet, Tensor};
use crate::cohort::Task;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    n_nodes: usize,
    hyperedges: Vec<Vec<usize>>,
    edge_weights: Vec<f64>,
}

impl Hypergraph {
    pub fn new(n_nodes: usize, hyperedges: Vec<Vec<usize>>, edge_weights: Vec<f64>) -> Result<Self> {
        if hyperedges.len() != edge_weights.len() {
            return Err(Error::Graph(format!(
                "{} hyperedges but {} weights",
                hyperedges.len(),
                edge_weights.len()
            )));
        }
        for (e, members) in hyperedges.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Graph(format!("hyperedge {e} is empty")));
            }
            let mut sorted = members.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != members.len() {
                return Err(Error::Graph(format!("hyperedge {e} repeats a node")));
            }
            if let Some(&v) = members.iter().find(|&&v| v >= n_nodes) {
                return Err(Error::Graph(format!("hyperedge {e} references node {v} of {n_nodes}")));
            }
        }
        if let Some(e) = edge_weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Graph(format!("hyperedge {e} has non-positive weight")));
        }
        Ok(Self {
            n_nodes,
            hyperedges,
            edge_weights,
        })
    }

    /// All weights 1.
    pub fn unweighted(n_nodes: usize, hyperedges: Vec<Vec<usize>>) -> Result<Self> {
        let w = vec![1.0; hyperedges.len()];
        Self::new(n_nodes, hyperedges, w)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    /// The n×m incidence matrix H.
    pub fn incidence(&self) -> Array2<f64> {
        let mut h = Array2::zeros((self.n_nodes, self.hyperedges.len()));
        for (e, members) in self.hyperedges.iter().enumerate() {
            for &v in members {
                h[[v, e]] = 1.0;
            }
        }
        h
    }

    /// `D_v^{-1/2} H W D_e^{-1} Hᵀ D_v^{-1/2}`, accumulated edge by edge.
    pub fn propagation(&self) -> Result<Array2<f64>> {
        let n = self.n_nodes;
        let mut deg = vec![0.0; n];
        for (members, w) in self.hyperedges.iter().zip(&self.edge_weights) {
            for &v in members {
                deg[v] += w;
            }
        }
        if let Some(i) = deg.iter().position(|&d| d == 0.0) {
            return Err(Error::Graph(format!("node {i} has no hyperedge")));
        }
        let mut p = Array2::zeros((n, n));
        for (members, w) in self.hyperedges.iter().zip(&self.edge_weights) {
            let c = w / members.len() as f64;
            for &u in members {
                for &v in members {
                    p[[u, v]] += c;
                }
            }
        }
        let s: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        for ((u, v), x) in p.indexed_iter_mut() {
            *x *= s[u] * s[v];
        }
        Ok(p)
    }
}

/// One hyperedge per node: the node and its `k` nearest neighbors under
/// Euclidean distance, ties going to the lower index. Weights are 1.
pub fn build_knn_hypergraph(latent: &Array2<f64>, k: usize) -> Result<Hypergraph> {
    let n = latent.nrows();
    if k == 0 {
        return Err(Error::invalid("k_neighbors must be at least 1"));
    }
    if k >= n {
        return Err(Error::invalid(format!("k_neighbors = {k} must be below the node count {n}")));
    }
    let mut edges = Vec::with_capacity(n);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        dist.clear();
        let zi = latent.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let d: f64 = zi.iter().zip(latent.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            dist.push((d, j));
        }
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nn: Vec<(f64, usize)> = dist[..k].to_vec();
        nn.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut e = Vec::with_capacity(k + 1);
        e.push(i);
        e.extend(nn.into_iter().map(|(_, j)| j));
        edges.push(e);
    }
    Hypergraph::unweighted(n, edges)
}

/// `D_v^{-1/2} H W D_e^{-1} Hᵀ D_v^{-1/2} X Θ`. The structure is a constant;
/// gradients reach `x` and `theta`.
pub fn hypergraph_convolution(g: &mut Graph, hg: &Hypergraph, x: Tensor, theta: Tensor) -> Result<Tensor> {
    let (n, c_in) = g.shape(x);
    if n != hg.n_nodes() {
        return Err(Error::shape(format!("{n} node rows for a hypergraph of {} nodes", hg.n_nodes())));
    }
    if g.shape(theta).0 != c_in {
        return Err(Error::shape(format!("theta has {} rows, features have {c_in}", g.shape(theta).0)));
    }
    let p = g.constant(hg.propagation()?)?;
    let px = g.matmul(p, x)?;
    g.matmul(px, theta)
}

/// `a_ij = σ((t − ‖z_i − z_j‖)/τ)` off the diagonal, `a_ii = 1`.
pub fn build_soft_adjacency(g: &mut Graph, latent: Tensor, threshold: Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let d = g.pairwise_distance(latent)?;
    let s = g.scalar_minus(threshold, d)?;
    let s = g.scale(s, 1.0 / temperature)?;
    let a = g.sigmoid(s)?;
    g.set_diagonal(a, 1.0)
}

/// `D^{-1/2} A D^{-1/2} X Θ` with `D` the row sums of `A`.
pub fn graph_convolution(g: &mut Graph, a: Tensor, x: Tensor, theta: Tensor) -> Result<Tensor> {
    let norm = g.sym_normalize(a)?;
    if g.shape(norm).1 != g.shape(x).0 {
        return Err(Error::shape(format!(
            "adjacency {:?} does not match {} node rows",
            g.shape(norm),
            g.shape(x).0
        )));
    }
    let ax = g.matmul(norm, x)?;
    g.matmul(ax, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Phgn,
    Lpnl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub latent_dim: usize,
    /// Widths of the two convolution layers; equal so the residual is
    /// well-shaped. The first head layer uses the same width.
    pub hidden_dims: Vec<usize>,
    pub k_neighbors: usize,
    pub soft_threshold_init: f64,
    pub temperature: f64,
    pub head: Task,
    pub dropout_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden_dims: vec![32, 32],
            k_neighbors: 5,
            soft_threshold_init: 1.0,
            temperature: 1.0,
            head: Task::Classification,
            dropout_rate: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be at least 1"));
        }
        if self.hidden_dims.len() != 2 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid(format!(
                "hidden_dims must hold two positive widths, got {:?}",
                self.hidden_dims
            )));
        }
        if self.hidden_dims[0] != self.hidden_dims[1] {
            return Err(Error::invalid(format!(
                "residual connection needs equal hidden widths, got {:?}",
                self.hidden_dims
            )));
        }
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !self.soft_threshold_init.is_finite() {
            return Err(Error::invalid("soft_threshold_init must be finite"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    fn width(&self) -> usize {
        self.hidden_dims[0]
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a))
}

/// Glorot-uniform weights, zero biases, and the soft threshold at its
/// configured initial value.
pub fn init_params(arch: Architecture, cfg: &NetworkConfig, n_inputs: usize, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    if n_inputs == 0 {
        return Err(Error::invalid("network needs at least one input feature"));
    }
    let mut rng = rng::substream(seed, 0);
    let (d, h) = (cfg.latent_dim, cfg.width());
    let mut p = ParamSet::new();
    match arch {
        Architecture::Phgn => {
            p.insert("proj.w", glorot(&mut rng, n_inputs, d));
            p.insert("proj.b", Array2::zeros((1, d)));
        }
        Architecture::Lpnl => {
            p.insert("mlp1.w", glorot(&mut rng, n_inputs, d));
            p.insert("mlp1.b", Array2::zeros((1, d)));
            p.insert("mlp2.w", glorot(&mut rng, d, d));
            p.insert("mlp2.b", Array2::zeros((1, d)));
            p.insert("threshold", Array2::from_elem((1, 1), cfg.soft_threshold_init));
        }
    }
    p.insert("conv1.theta", glorot(&mut rng, d, h));
    p.insert("conv2.theta", glorot(&mut rng, h, h));
    p.insert("fc1.w", glorot(&mut rng, h, h));
    p.insert("fc1.b", Array2::zeros((1, h)));
    p.insert("fc2.w", glorot(&mut rng, h, 1));
    p.insert("fc2.b", Array2::zeros((1, 1)));
    Ok(p)
}

fn affine(g: &mut Graph, x: Tensor, params: &ParamSet, prefix: &str) -> Result<Tensor> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    let (n_in, n_w) = (g.shape(x).1, g.shape(w).0);
    if n_in != n_w {
        return Err(Error::shape(format!("{prefix}: input has {n_in} columns, weights expect {n_w}")));
    }
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Latent projection: one affine layer with ReLU for PHGN, a two-layer MLP
/// with ReLU between the layers for LPNL.
pub fn latent_project(g: &mut Graph, x: Tensor, arch: Architecture, params: &ParamSet) -> Result<Tensor> {
    match arch {
        Architecture::Phgn => {
            let z = affine(g, x, params, "proj")?;
            g.relu(z)
        }
        Architecture::Lpnl => {
            let h = affine(g, x, params, "mlp1")?;
            let h = g.relu(h)?;
            affine(g, h, params, "mlp2")
        }
    }
}

/// Inverted dropout; identity when `rng` is `None` or the rate is 0.
fn dropout(g: &mut Graph, x: Tensor, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let (r, c) = g.shape(x);
    let mask = Array2::from_shape_fn((r, c), |_| if rng.random::<f64>() < rate { 0.0 } else { keep });
    let m = g.constant(mask)?;
    g.mul(x, m)
}

fn head(g: &mut Graph, x: Tensor, cfg: &NetworkConfig, params: &ParamSet, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let h = affine(g, x, params, "fc1")?;
    let h = g.relu(h)?;
    let h = dropout(g, h, cfg.dropout_rate, rng)?;
    affine(g, h, params, "fc2")
}

/// The kNN hypergraph PHGN would build for `x`, from its current latent
/// projection.
pub fn phgn_hypergraph(x: &Array2<f64>, cfg: &NetworkConfig, params: &ParamSet) -> Result<Hypergraph> {
    let mut g = Graph::new();
    let xt = g.constant(x.clone())?;
    let z = latent_project(&mut g, xt, Architecture::Phgn, params)?;
    build_knn_hypergraph(g.value(z), cfg.k_neighbors)
}

/// PHGN: latent projection, kNN hypergraph from the latent values, two
/// hypergraph convolutions with ELU and row normalization joined by a
/// residual connection, then the two-layer head. n×p → n×1.
pub fn phgn_forward(
    g: &mut Graph,
    x: Tensor,
    cfg: &NetworkConfig,
    params: &ParamSet,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    cfg.validate()?;
    let z = latent_project(g, x, Architecture::Phgn, params)?;
    // neighbor selection is structure, not a differentiable function of z
    let hg = build_knn_hypergraph(g.value(z), cfg.k_neighbors)?;
    let t1 = g.param(params, "conv1.theta")?;
    let t2 = g.param(params, "conv2.theta")?;
    let h = hypergraph_convolution(g, &hg, z, t1)?;
    let h = g.elu(h)?;
    let x1 = g.row_l2_normalize(h)?;
    let h = hypergraph_convolution(g, &hg, x1, t2)?;
    let h = g.elu(h)?;
    let h = g.row_l2_normalize(h)?;
    let x2 = g.add(x1, h)?;
    head(g, x2, cfg, params, rng)
}

/// LPNL: MLP latent projection, learned soft adjacency, two graph
/// convolutions with ReLU, then the two-layer head. n×p → n×1.
pub fn lpnl_forward(
    g: &mut Graph,
    x: Tensor,
    cfg: &NetworkConfig,
    params: &ParamSet,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    cfg.validate()?;
    let z = latent_project(g, x, Architecture::Lpnl, params)?;
    let t = g.param(params, "threshold")?;
    let a = build_soft_adjacency(g, z, t, cfg.temperature)?;
    let t1 = g.param(params, "conv1.theta")?;
    let t2 = g.param(params, "conv2.theta")?;
    let h = graph_convolution(g, a, z, t1)?;
    let h = g.relu(h)?;
    let h = graph_convolution(g, a, h, t2)?;
    let h = g.relu(h)?;
    head(g, h, cfg, params, rng)
}

/// Mean binary cross-entropy on raw scores.
pub fn bce_loss(g: &mut Graph, scores: Tensor, labels: &[u8]) -> Result<Tensor> {
    g.bce_with_logits(scores, labels)
}

/// Average negative log partial likelihood over events plus
/// `l2_lambda · Σ‖θ‖²` over `params`.
pub fn cox_partial_loss(
    g: &mut Graph,
    risks: Tensor,
    times: &[f64],
    events: &[bool],
    l2_lambda: f64,
    params: &[Tensor],
) -> Result<Tensor> {
    if !(l2_lambda >= 0.0) {
        return Err(Error::invalid(format!("l2_lambda must be >= 0, got {l2_lambda}")));
    }
    let nll = g.cox_partial_nll(risks, times, events)?;
    if l2_lambda == 0.0 || params.is_empty() {
        return Ok(nll);
    }
    let mut reg = g.sum_squares(params[0])?;
    for &p in &params[1..] {
        let s = g.sum_squares(p)?;
        reg = g.add(reg, s)?;
    }
    let reg = g.scale(reg, l2_lambda)?;
    g.add(nll, reg)
}

/// A trained or freshly initialized network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNetwork {
    pub architecture: Architecture,
    pub config: NetworkConfig,
    pub n_inputs: usize,
    pub params: ParamSet,
}

impl GraphNetwork {
    pub fn new(architecture: Architecture, config: NetworkConfig, n_inputs: usize, seed: u64) -> Result<Self> {
        let params = init_params(architecture, &config, n_inputs, seed)?;
        Ok(Self {
            architecture,
            config,
            n_inputs,
            params,
        })
    }

    /// Raw scores for `x` as a tensor in `g`, using `params`.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        x: &Array2<f64>,
        params: &ParamSet,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        if x.ncols() != self.n_inputs {
            return Err(Error::shape(format!(
                "network expects {} features, got {}",
                self.n_inputs,
                x.ncols()
            )));
        }
        let xt = g.constant(x.clone())?;
        match self.architecture {
            Architecture::Phgn => phgn_forward(g, xt, &self.config, params, rng),
            Architecture::Lpnl => lpnl_forward(g, xt, &self.config, params, rng),
        }
    }

    /// Raw scores (logits or log-risks) in evaluation mode. The graph is
    /// built over the rows of `x` alone.
    pub fn scores(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward_with(&mut g, x, &self.params, None)?;
        Ok(g.value(out).iter().copied().collect())
    }

    /// Probabilities for a classification head, log-risks for a Cox head.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let s = self.scores(x)?;
        Ok(match self.config.head {
            Task::Classification => s.into_iter().map(sigmoid).collect(),
            Task::Survival => s,
        })
    }
}
