//! Layer primitives that own their parameters as plain tensors and bind them
//! into a fresh graph on every forward pass.

use std::collections::BTreeMap;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::Result;

use super::{BN_EPS, BN_MOMENTUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Param,
    /// Carried state such as normalization running statistics.
    Buffer,
}

/// One forward pass: a graph plus the binding of parameter paths to leaves.
/// Build a fresh session per batch; bindings are keyed by the dotted path the
/// visitor reports, so the trainer can look up gradients by name.
pub struct Session {
    pub graph: Graph,
    pub mode: Mode,
    params: BTreeMap<String, NodeId>,
    bn_nodes: Vec<(String, NodeId)>,
}

impl Session {
    pub fn new(mode: Mode) -> Self {
        Session { graph: Graph::new(), mode, params: BTreeMap::new(), bn_nodes: Vec::new() }
    }

    /// Insert a parameter tensor as a leaf. Gradients are requested only for
    /// trainable tensors in a train-mode session.
    pub fn bind(&mut self, path: &str, t: &Tensor) -> NodeId {
        let mut owned = t.clone();
        let trainable = owned.requires_grad && self.mode == Mode::Train;
        owned.requires_grad = trainable;
        let id = self.graph.leaf_owned(owned);
        if trainable {
            self.params.insert(path.to_string(), id);
        }
        id
    }

    pub fn record_bn(&mut self, path: &str, node: NodeId) {
        self.bn_nodes.push((path.to_string(), node));
    }

    pub fn param_node(&self, path: &str) -> Option<NodeId> {
        self.params.get(path).copied()
    }

    pub fn param_nodes(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Normalization nodes recorded during a train-mode pass, in layer order.
    pub fn bn_nodes(&self) -> &[(String, NodeId)] {
        &self.bn_nodes
    }
}

/// Walk every owned tensor with its dotted path.
pub trait Visitable {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind));
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind));
}

pub(crate) fn jp(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape is valid").with_grad()
}

// ── conv2d ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// [Cout, Cin/groups, KF, KT]
    pub weight: Tensor,
    /// [Cout]
    pub bias: Tensor,
    pub pad: (usize, usize, usize, usize),
    pub groups: usize,
}

impl Conv2d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        pad: (usize, usize, usize, usize),
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(groups >= 1 && cin % groups == 0 && cout % groups == 0, "bad conv grouping");
        let fan_in = cin / groups * kernel.0 * kernel.1;
        Conv2d {
            weight: uniform_init(&[cout, cin / groups, kernel.0, kernel.1], fan_in, rng),
            bias: Tensor::zeros(&[cout]).with_grad(),
            pad,
            groups,
        }
    }

    /// Square kernel with symmetric padding that preserves both extents.
    pub fn same(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "same-padding helper needs an odd kernel");
        let p = (k - 1) / 2;
        Conv2d::new(cin, cout, (k, k), (p, p, p, p), 1, rng)
    }

    pub fn pointwise(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv2d::new(cin, cout, (1, 1), (0, 0, 0, 0), 1, rng)
    }

    /// Frequency-axis kernel (k, 1) padded to preserve F, splitting the slack
    /// as (ceil, floor) when k is even.
    pub fn freq(cin: usize, cout: usize, k: usize, groups: usize, rng: &mut ChaCha8Rng) -> Self {
        let top = k / 2;
        let bottom = (k - 1) / 2;
        Conv2d::new(cin, cout, (k, 1), (top, bottom, 0, 0), groups, rng)
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let w = s.bind(&jp(path, "weight"), &self.weight);
        let b = s.bind(&jp(path, "bias"), &self.bias);
        s.graph.conv2d(x, w, Some(b), self.pad, self.groups)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Visitable for Conv2d {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&jp(path, "weight"), &self.weight, ParamKind::Param);
        f(&jp(path, "bias"), &self.bias, ParamKind::Param);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&jp(path, "weight"), &mut self.weight, ParamKind::Param);
        f(&jp(path, "bias"), &mut self.bias, ParamKind::Param);
    }
}

// ── batch normalization ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[c], 1.0).with_grad(),
            beta: Tensor::zeros(&[c]).with_grad(),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let g = s.bind(&jp(path, "gamma"), &self.gamma);
        let b = s.bind(&jp(path, "beta"), &self.beta);
        match s.mode {
            Mode::Train => {
                let y = s.graph.batch_norm_train(x, g, b, self.eps)?;
                s.record_bn(path, y);
                Ok(y)
            }
            Mode::Eval => s.graph.batch_norm_eval(
                x,
                g,
                b,
                self.running_mean.data(),
                self.running_var.data(),
                self.eps,
            ),
        }
    }

    /// Fold one batch's statistics into the running estimates. `var` must be
    /// the biased batch variance over `n` values per channel.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], n: usize) {
        assert!(n >= 2, "running update needs at least two values per channel");
        let unbias = n as f64 / (n - 1) as f64;
        let m = self.momentum;
        for (slot, &v) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *slot = (1.0 - m) * *slot + m * v;
        }
        for (slot, &v) in self.running_var.data_mut().iter_mut().zip(var) {
            *slot = (1.0 - m) * *slot + m * v * unbias;
        }
    }
}

impl Visitable for BatchNorm {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&jp(path, "gamma"), &self.gamma, ParamKind::Param);
        f(&jp(path, "beta"), &self.beta, ParamKind::Param);
        f(&jp(path, "running_mean"), &self.running_mean, ParamKind::Buffer);
        f(&jp(path, "running_var"), &self.running_var, ParamKind::Buffer);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&jp(path, "gamma"), &mut self.gamma, ParamKind::Param);
        f(&jp(path, "beta"), &mut self.beta, ParamKind::Param);
        f(&jp(path, "running_mean"), &mut self.running_mean, ParamKind::Buffer);
        f(&jp(path, "running_var"), &mut self.running_var, ParamKind::Buffer);
    }
}

// ── linear ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Linear {
    /// [Out, In]
    pub weight: Tensor,
    /// [Out]
    pub bias: Tensor,
}

impl Linear {
    pub fn new(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: uniform_init(&[n_out, n_in], n_in, rng),
            bias: Tensor::zeros(&[n_out]).with_grad(),
        }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let w = s.bind(&jp(path, "weight"), &self.weight);
        let b = s.bind(&jp(path, "bias"), &self.bias);
        s.graph.linear(x, w, b)
    }
}

impl Visitable for Linear {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&jp(path, "weight"), &self.weight, ParamKind::Param);
        f(&jp(path, "bias"), &self.bias, ParamKind::Param);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&jp(path, "weight"), &mut self.weight, ParamKind::Param);
        f(&jp(path, "bias"), &mut self.bias, ParamKind::Param);
    }
}
