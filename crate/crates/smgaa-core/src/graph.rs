//! Reverse-mode autodiff over an arena tape.
//!
//! Each forward call appends a node holding the computed value and a typed
//! back-op record; `backward` replays the tape in reverse, accumulating
//! adjoints with `+=` so a value used k times receives the sum of k branch
//! gradients. One graph serves one forward/backward pass and is then dropped.
//! Distinct graphs never share mutable state, so concurrent forwards over
//! shared immutable parameters are safe.

use crate::tensor::{broadcast_shape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug)]
enum BackOp {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        pad: (usize, usize, usize, usize),
        groups: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        invstd: Vec<f64>,
        train: bool,
    },
    Gelu { x: NodeId },
    Sigmoid { x: NodeId },
    GlobalAvgPool { x: NodeId },
    AdaptivePoolF { x: NodeId, mode: PoolMode, argmax: Vec<usize> },
    EwMul { a: NodeId, b: NodeId },
    EwAdd { a: NodeId, b: NodeId },
    BilinearResizeF { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Flatten { x: NodeId },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    MaxPool2 { x: NodeId, argmax: Vec<usize> },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
    SumAll { x: NodeId },
}

struct Node {
    value: Tensor,
    op: BackOp,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_ran: bool,
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gauss_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gauss_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Zero-padded copy of one [B,C,F,T] block.
fn pad4(
    x: &[f64],
    (b, c, f, t): (usize, usize, usize, usize),
    (pt, pb, pl, pr): (usize, usize, usize, usize),
) -> (Vec<f64>, usize, usize) {
    let fp = f + pt + pb;
    let tp = t + pl + pr;
    let mut out = vec![0.0; b * c * fp * tp];
    for bc in 0..b * c {
        let src = bc * f * t;
        let dst = bc * fp * tp;
        for fi in 0..f {
            let s = src + fi * t;
            let d = dst + (fi + pt) * tp + pl;
            out[d..d + t].copy_from_slice(&x[s..s + t]);
        }
    }
    (out, fp, tp)
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

/// Effective row-major strides with 0 on broadcast (size-1) axes.
fn bcast_strides(shape: &[usize]) -> [usize; 4] {
    let mut strides = [0usize; 4];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        if shape[d] != 1 {
            strides[d] = acc;
        }
        acc *= shape[d];
    }
    strides
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: BackOp, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        self.nodes[id.0].value.clone()
    }

    /// Gradient of the last `backward` call w.r.t. this node, if it was tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Batch statistics (mean, biased variance) recorded by a train-mode
    /// batch_norm node; callers use them to update running stats.
    pub fn bn_batch_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.0].op {
            BackOp::BatchNorm { mean, var, train: true, .. } => Some((mean, var)),
            _ => None,
        }
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(t.clone(), BackOp::Leaf, needs)
    }

    pub fn leaf_owned(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(t, BackOp::Leaf, needs)
    }

    // ── operators ───────────────────────────────────────────────────────

    /// Grouped stride-1 2-D convolution with explicit asymmetric padding.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        pad: (usize, usize, usize, usize),
        groups: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::config(format!(
                "conv2d expects rank-4 input and kernel, got {xs:?} and {ws:?}"
            )));
        }
        let (bn, cin, f, t) = dims4(&xs);
        let (cout, cin_g, kf, kt) = dims4(&ws);
        if groups == 0 || cin % groups != 0 {
            return Err(Error::config(format!(
                "groups {groups} does not divide input channels {cin}"
            )));
        }
        if cout % groups != 0 {
            return Err(Error::config(format!(
                "groups {groups} does not divide output channels {cout}"
            )));
        }
        if cin_g != cin / groups {
            return Err(Error::config(format!(
                "kernel expects {cin_g} channels per group but input has {} ({} / {groups})",
                cin / groups,
                cin
            )));
        }
        let (pt, pb, pl, pr) = pad;
        let fp = f + pt + pb;
        let tp = t + pl + pr;
        if kf > fp {
            return Err(Error::config(format!(
                "kernel frequency extent {kf} exceeds padded input extent {fp}"
            )));
        }
        if kt > tp {
            return Err(Error::config(format!(
                "kernel time extent {kt} exceeds padded input extent {tp}"
            )));
        }
        if let Some(bias) = b {
            let bs = self.shape(bias);
            if bs != [cout] {
                return Err(Error::config(format!(
                    "bias shape {bs:?} does not match {cout} output channels"
                )));
            }
        }
        let fo = fp - kf + 1;
        let to = tp - kt + 1;
        let cout_g = cout / groups;

        let (xp, fp, tp) = pad4(self.data(x), (bn, cin, f, t), pad);
        let wd = self.data(w);
        let mut out = vec![0.0; bn * cout * fo * to];
        for bi in 0..bn {
            for co in 0..cout {
                let g = co / cout_g;
                let oplane = (bi * cout + co) * fo * to;
                if let Some(bias) = b {
                    let bv = self.data(bias)[co];
                    out[oplane..oplane + fo * to].fill(bv);
                }
                for ci in 0..cin_g {
                    let xplane = (bi * cin + g * cin_g + ci) * fp * tp;
                    for kfi in 0..kf {
                        for kti in 0..kt {
                            let wv = wd[((co * cin_g + ci) * kf + kfi) * kt + kti];
                            if wv == 0.0 {
                                continue;
                            }
                            for fi in 0..fo {
                                let xrow = xplane + (fi + kfi) * tp + kti;
                                let orow = oplane + fi * to;
                                for ti in 0..to {
                                    out[orow + ti] += wv * xp[xrow + ti];
                                }
                            }
                        }
                    }
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad
            || self.nodes[w.0].needs_grad
            || b.is_some_and(|bias| self.nodes[bias.0].needs_grad);
        let value = Tensor::from_vec(&[bn, cout, fo, to], out)?;
        Ok(self.push(value, BackOp::Conv2d { x, w, b, pad, groups }, needs))
    }

    /// Train mode: normalize per channel over B,F,T with batch statistics.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        self.batch_norm_impl(x, gamma, beta, None, eps)
    }

    /// Eval mode: normalize with the provided running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        self.batch_norm_impl(x, gamma, beta, Some((running_mean, running_var)), eps)
    }

    fn batch_norm_impl(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("batch_norm expects rank-4 input, got {xs:?}")));
        }
        let (b, c, f, t) = dims4(&xs);
        let n = b * f * t;
        let train = running.is_none();
        if train && n < 2 {
            return Err(Error::config(format!(
                "degenerate batch: B*F*T = {n} < 2, variance undefined in train mode"
            )));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::config(format!(
                "batch_norm affine shapes {:?}/{:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xd = self.data(x);
        let (mean, var) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::config(format!(
                        "running stats length {}/{} does not match {c} channels",
                        rm.len(),
                        rv.len()
                    )));
                }
                (rm.to_vec(), rv.to_vec())
            }
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        let plane = (bi * c + ci) * f * t;
                        for v in &xd[plane..plane + f * t] {
                            s += v;
                        }
                    }
                    let m = s / n as f64;
                    let mut sq = 0.0;
                    for bi in 0..b {
                        let plane = (bi * c + ci) * f * t;
                        for v in &xd[plane..plane + f * t] {
                            let d = v - m;
                            sq += d * d;
                        }
                    }
                    mean[ci] = m;
                    var[ci] = sq / n as f64;
                }
                (mean, var)
            }
        };
        let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * f * t;
                let (g, be, m, is) = (gd[ci], bd[ci], mean[ci], invstd[ci]);
                for i in plane..plane + f * t {
                    out[i] = g * (xd[i] - m) * is + be;
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad
            || self.nodes[gamma.0].needs_grad
            || self.nodes[beta.0].needs_grad;
        let value = Tensor::from_vec(&xs, out)?;
        Ok(self.push(value, BackOp::BatchNorm { x, gamma, beta, mean, var, invstd, train }, needs))
    }

    /// Exact Gauss-CDF form x·Φ(x).
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v * gauss_cdf(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&shape, out).expect("shape preserved");
        self.push(value, BackOp::Gelu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.data(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&shape, out).expect("shape preserved");
        self.push(value, BackOp::Sigmoid { x }, needs)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("global_avg_pool expects rank-4 input, got {xs:?}")));
        }
        let (b, c, f, t) = dims4(&xs);
        let xd = self.data(x);
        let mut out = vec![0.0; b * c];
        for bc in 0..b * c {
            let plane = bc * f * t;
            out[bc] = xd[plane..plane + f * t].iter().sum::<f64>() / (f * t) as f64;
        }
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&[b, c, 1, 1], out)?;
        Ok(self.push(value, BackOp::GlobalAvgPool { x }, needs))
    }

    /// Pool along frequency into `target_f` floor-partition bins; T untouched.
    pub fn adaptive_pool_f(&mut self, x: NodeId, target_f: usize, mode: PoolMode) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("adaptive_pool expects rank-4 input, got {xs:?}")));
        }
        let (b, c, f, t) = dims4(&xs);
        if target_f == 0 {
            return Err(Error::config("adaptive_pool target must be positive"));
        }
        if target_f > f {
            return Err(Error::config(format!(
                "adaptive_pool target {target_f} exceeds frequency extent {f}"
            )));
        }
        let xd = self.data(x);
        let mut out = vec![0.0; b * c * target_f * t];
        let mut argmax = Vec::new();
        if mode == PoolMode::Max {
            argmax.resize(out.len(), 0usize);
        }
        for bc in 0..b * c {
            let plane = bc * f * t;
            for o in 0..target_f {
                let start = o * f / target_f;
                let end = (o + 1) * f / target_f;
                let orow = (bc * target_f + o) * t;
                for ti in 0..t {
                    match mode {
                        PoolMode::Max => {
                            let mut best = xd[plane + start * t + ti];
                            let mut besti = plane + start * t + ti;
                            for fi in start + 1..end {
                                let v = xd[plane + fi * t + ti];
                                if v > best {
                                    best = v;
                                    besti = plane + fi * t + ti;
                                }
                            }
                            out[orow + ti] = best;
                            argmax[orow + ti] = besti;
                        }
                        PoolMode::Avg => {
                            let mut s = 0.0;
                            for fi in start..end {
                                s += xd[plane + fi * t + ti];
                            }
                            out[orow + ti] = s / (end - start) as f64;
                        }
                    }
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&[b, c, target_f, t], out)?;
        Ok(self.push(value, BackOp::AdaptivePoolF { x, mode, argmax }, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew(a, b, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew(a, b, false)
    }

    fn ew(&mut self, a: NodeId, b: NodeId, mul: bool) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)?;
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out;
        if sa == sb {
            out = Vec::with_capacity(ad.len());
            if mul {
                out.extend(ad.iter().zip(bd).map(|(&x, &y)| x * y));
            } else {
                out.extend(ad.iter().zip(bd).map(|(&x, &y)| x + y));
            }
        } else {
            out = vec![0.0; out_shape.iter().product()];
            ew_walk(&out_shape, &sa, &sb, |flat, ia, ib| {
                out[flat] = if mul { ad[ia] * bd[ib] } else { ad[ia] + bd[ib] };
            });
        }
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        let value = Tensor::from_vec(&out_shape, out)?;
        let op = if mul { BackOp::EwMul { a, b } } else { BackOp::EwAdd { a, b } };
        Ok(self.push(value, op, needs))
    }

    /// Linear interpolation along F, align-corners-false sample centers.
    pub fn bilinear_resize_f(&mut self, x: NodeId, target_f: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("bilinear_resize expects rank-4 input, got {xs:?}")));
        }
        if target_f == 0 {
            return Err(Error::config("bilinear_resize target must be positive"));
        }
        let (b, c, f, t) = dims4(&xs);
        let xd = self.data(x);
        let mut out = vec![0.0; b * c * target_f * t];
        let taps = resize_taps(f, target_f);
        for bc in 0..b * c {
            let plane = bc * f * t;
            for (o, &(f0, f1, w)) in taps.iter().enumerate() {
                let orow = (bc * target_f + o) * t;
                let r0 = plane + f0 * t;
                let r1 = plane + f1 * t;
                for ti in 0..t {
                    out[orow + ti] = (1.0 - w) * xd[r0 + ti] + w * xd[r1 + ti];
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&[b, c, target_f, t], out)?;
        Ok(self.push(value, BackOp::BilinearResizeF { x }, needs))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::config(format!(
                "linear expects rank-2 input and weight, got {xs:?} and {ws:?}"
            )));
        }
        let (bn, n) = (xs[0], xs[1]);
        let (m, wn) = (ws[0], ws[1]);
        if wn != n {
            return Err(Error::config(format!(
                "linear weight expects {wn} input features but input has {n}"
            )));
        }
        if self.shape(b) != [m] {
            return Err(Error::config(format!(
                "linear bias shape {:?} does not match {m} outputs",
                self.shape(b)
            )));
        }
        let xd = self.data(x);
        let wd = self.data(w);
        let bd = self.data(b);
        let mut out = vec![0.0; bn * m];
        for bi in 0..bn {
            let xrow = bi * n;
            for mi in 0..m {
                let wrow = mi * n;
                let mut acc = bd[mi];
                for ni in 0..n {
                    acc += xd[xrow + ni] * wd[wrow + ni];
                }
                out[bi * m + mi] = acc;
            }
        }
        let needs = self.nodes[x.0].needs_grad
            || self.nodes[w.0].needs_grad
            || self.nodes[b.0].needs_grad;
        let value = Tensor::from_vec(&[bn, m], out)?;
        Ok(self.push(value, BackOp::Linear { x, w, b }, needs))
    }

    /// Collapse all axes after the batch axis, preserving row-major order.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::config(format!("flatten expects rank ≥ 2, got {xs:?}")));
        }
        let b = xs[0];
        let rest: usize = xs[1..].iter().product();
        let data = self.data(x).to_vec();
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&[b, rest], data)?;
        Ok(self.push(value, BackOp::Flatten { x }, needs))
    }

    /// Concatenate rank-4 tensors along channel (1) or frequency (2) axis.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::config("concat of zero tensors"));
        }
        if axis != 1 && axis != 2 {
            return Err(Error::config(format!("concat supports axes 1 and 2, got {axis}")));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.len() != 4 {
            return Err(Error::config(format!("concat expects rank-4 inputs, got {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            for d in 0..4 {
                if d != axis && s[d] != first[d] {
                    return Err(Error::config(format!(
                        "concat mismatch on axis {d}: {s:?} vs {first:?}"
                    )));
                }
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut out = vec![0.0; out_shape.iter().product()];
        let mut base = 0;
        for &p in parts {
            let e = self.shape(p)[axis];
            let pd = self.data(p);
            for o in 0..outer {
                let src = o * e * inner;
                let dst = (o * total + base) * inner;
                out[dst..dst + e * inner].copy_from_slice(&pd[src..src + e * inner]);
            }
            base += e;
        }
        let needs = parts.iter().any(|&p| self.nodes[p.0].needs_grad);
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.push(value, BackOp::Concat { parts: parts.to_vec(), axis }, needs))
    }

    /// Contiguous slice along channel (1) or frequency (2) axis.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        if axis != 1 && axis != 2 {
            return Err(Error::config(format!("slice supports axes 1 and 2, got {axis}")));
        }
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("slice expects rank-4 input, got {xs:?}")));
        }
        if len == 0 || start + len > xs[axis] {
            return Err(Error::config(format!(
                "slice [{start}, {}) out of range for extent {}",
                start + len,
                xs[axis]
            )));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let e = xs[axis];
        let xd = self.data(x);
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = (o * e + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&xd[src..src + len * inner]);
        }
        let mut out_shape = xs.clone();
        out_shape[axis] = len;
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.push(value, BackOp::Slice { x, axis, start }, needs))
    }

    /// 2×2 stride-2 max pool; F must be even, T uses ceil mode.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("max_pool2 expects rank-4 input, got {xs:?}")));
        }
        let (b, c, f, t) = dims4(&xs);
        if f % 2 != 0 {
            return Err(Error::config(format!("max_pool2 requires even frequency extent, got {f}")));
        }
        let fo = f / 2;
        let to = t.div_ceil(2);
        let xd = self.data(x);
        let mut out = vec![0.0; b * c * fo * to];
        let mut argmax = vec![0usize; out.len()];
        for bc in 0..b * c {
            let plane = bc * f * t;
            for fi in 0..fo {
                for ti in 0..to {
                    let mut best = f64::NEG_INFINITY;
                    let mut besti = 0;
                    for df in 0..2 {
                        for dt in 0..2 {
                            let (sf, st) = (2 * fi + df, 2 * ti + dt);
                            if st >= t {
                                continue;
                            }
                            let idx = plane + sf * t + st;
                            if xd[idx] > best {
                                best = xd[idx];
                                besti = idx;
                            }
                        }
                    }
                    let o = (bc * fo + fi) * to + ti;
                    out[o] = best;
                    argmax[o] = besti;
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        let value = Tensor::from_vec(&[b, c, fo, to], out)?;
        Ok(self.push(value, BackOp::MaxPool2 { x, argmax }, needs))
    }

    /// Mean over the batch of −log softmax(logits)[label], stable LSE form.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 {
            return Err(Error::config(format!("cross_entropy expects rank-2 logits, got {ls:?}")));
        }
        let (b, m) = (ls[0], ls[1]);
        if labels.is_empty() {
            return Err(Error::data("cross_entropy on an empty batch"));
        }
        if labels.len() != b {
            return Err(Error::config(format!(
                "{} labels for a batch of {b} logits rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::config(format!("label {bad} out of range for {m} classes")));
        }
        let ld = self.data(logits);
        let mut total = 0.0;
        for (bi, &label) in labels.iter().enumerate() {
            let row = &ld[bi * m..(bi + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let needs = self.nodes[logits.0].needs_grad;
        let value = Tensor::scalar(total / b as f64);
        Ok(self.push(value, BackOp::CrossEntropy { logits, labels: labels.to_vec() }, needs))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.data(x).iter().sum();
        let needs = self.nodes[x.0].needs_grad;
        self.push(Tensor::scalar(s), BackOp::SumAll { x }, needs)
    }

    // ── reverse pass ────────────────────────────────────────────────────

    /// Populate gradients for every tracked node reachable from `loss`.
    /// A second call on the same graph is an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_ran {
            return Err(Error::config("backward already ran on this graph; build a new graph"));
        }
        if self.nodes.is_empty() {
            return Err(Error::config("backward on an empty graph"));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::config(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_ran = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Split borrows: node values/ops are read-only here, grads are written.
        let (nodes, grads) = (&self.nodes, &mut self.grads);
        let needs = |id: NodeId| nodes[id.0].needs_grad;
        match &nodes[i].op {
            BackOp::Leaf => {}
            BackOp::Conv2d { x, w, b, pad, groups } => {
                let xs = nodes[x.0].value.shape();
                let ws = nodes[w.0].value.shape();
                let (bn, cin, f, t) = dims4(xs);
                let (cout, cin_g, kf, kt) = dims4(ws);
                let cout_g = cout / groups;
                let (pt, _, pl, _) = *pad;
                let os = nodes[i].value.shape();
                let (fo, to) = (os[2], os[3]);
                let (xp, fp, tp) = pad4(nodes[x.0].value.data(), (bn, cin, f, t), *pad);
                let wd = nodes[w.0].value.data();
                if needs(*x) {
                    let mut gxp = vec![0.0; xp.len()];
                    for bi in 0..bn {
                        for co in 0..cout {
                            let grp = co / cout_g;
                            let oplane = (bi * cout + co) * fo * to;
                            for ci in 0..cin_g {
                                let xplane = (bi * cin + grp * cin_g + ci) * fp * tp;
                                for kfi in 0..kf {
                                    for kti in 0..kt {
                                        let wv = wd[((co * cin_g + ci) * kf + kfi) * kt + kti];
                                        if wv == 0.0 {
                                            continue;
                                        }
                                        for fi in 0..fo {
                                            let xrow = xplane + (fi + kfi) * tp + kti;
                                            let orow = oplane + fi * to;
                                            for ti in 0..to {
                                                gxp[xrow + ti] += wv * g[orow + ti];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    // crop the padded gradient back to the input extent
                    let gx = Self::accumulate(grads, *x, bn * cin * f * t);
                    for bc in 0..bn * cin {
                        let src = bc * fp * tp;
                        let dst = bc * f * t;
                        for fi in 0..f {
                            let s = src + (fi + pt) * tp + pl;
                            let d = dst + fi * t;
                            for ti in 0..t {
                                gx[d + ti] += gxp[s + ti];
                            }
                        }
                    }
                }
                if needs(*w) {
                    let gw = Self::accumulate(grads, *w, wd.len());
                    for bi in 0..bn {
                        for co in 0..cout {
                            let grp = co / cout_g;
                            let oplane = (bi * cout + co) * fo * to;
                            for ci in 0..cin_g {
                                let xplane = (bi * cin + grp * cin_g + ci) * fp * tp;
                                for kfi in 0..kf {
                                    for kti in 0..kt {
                                        let mut acc = 0.0;
                                        for fi in 0..fo {
                                            let xrow = xplane + (fi + kfi) * tp + kti;
                                            let orow = oplane + fi * to;
                                            for ti in 0..to {
                                                acc += xp[xrow + ti] * g[orow + ti];
                                            }
                                        }
                                        gw[((co * cin_g + ci) * kf + kfi) * kt + kti] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(bias) = *b {
                    if needs(bias) {
                        let gb = Self::accumulate(grads, bias, cout);
                        for bi in 0..bn {
                            for co in 0..cout {
                                let oplane = (bi * cout + co) * fo * to;
                                gb[co] += g[oplane..oplane + fo * to].iter().sum::<f64>();
                            }
                        }
                    }
                }
            }
            BackOp::BatchNorm { x, gamma, beta, mean, invstd, train, .. } => {
                let xs = nodes[x.0].value.shape();
                let (b, c, f, t) = dims4(xs);
                let n = (b * f * t) as f64;
                let xd = nodes[x.0].value.data();
                let gd = nodes[gamma.0].value.data();
                // per-channel sums of g and g·x̂
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let plane = (bi * c + ci) * f * t;
                        let (m, is) = (mean[ci], invstd[ci]);
                        for k in plane..plane + f * t {
                            sum_g[ci] += g[k];
                            sum_gx[ci] += g[k] * (xd[k] - m) * is;
                        }
                    }
                }
                if needs(*x) {
                    let gx = Self::accumulate(grads, *x, xd.len());
                    for bi in 0..b {
                        for ci in 0..c {
                            let plane = (bi * c + ci) * f * t;
                            let (m, is, ga) = (mean[ci], invstd[ci], gd[ci]);
                            if *train {
                                let (mg, mgx) = (sum_g[ci] / n, sum_gx[ci] / n);
                                for k in plane..plane + f * t {
                                    let xhat = (xd[k] - m) * is;
                                    gx[k] += ga * is * (g[k] - mg - xhat * mgx);
                                }
                            } else {
                                for k in plane..plane + f * t {
                                    gx[k] += ga * is * g[k];
                                }
                            }
                        }
                    }
                }
                if needs(*gamma) {
                    let gg = Self::accumulate(grads, *gamma, c);
                    for ci in 0..c {
                        gg[ci] += sum_gx[ci];
                    }
                }
                if needs(*beta) {
                    let gb = Self::accumulate(grads, *beta, c);
                    for ci in 0..c {
                        gb[ci] += sum_g[ci];
                    }
                }
            }
            BackOp::Gelu { x } => {
                if needs(*x) {
                    let xd = nodes[x.0].value.data();
                    let gx = Self::accumulate(grads, *x, xd.len());
                    for (k, &v) in xd.iter().enumerate() {
                        gx[k] += g[k] * (gauss_cdf(v) + v * gauss_pdf(v));
                    }
                }
            }
            BackOp::Sigmoid { x } => {
                if needs(*x) {
                    let yd = nodes[i].value.data();
                    let gx = Self::accumulate(grads, *x, yd.len());
                    for (k, &y) in yd.iter().enumerate() {
                        gx[k] += g[k] * y * (1.0 - y);
                    }
                }
            }
            BackOp::GlobalAvgPool { x } => {
                if needs(*x) {
                    let xs = nodes[x.0].value.shape();
                    let (b, c, f, t) = dims4(xs);
                    let scale = 1.0 / (f * t) as f64;
                    let gx = Self::accumulate(grads, *x, b * c * f * t);
                    for bc in 0..b * c {
                        let gv = g[bc] * scale;
                        let plane = bc * f * t;
                        for k in plane..plane + f * t {
                            gx[k] += gv;
                        }
                    }
                }
            }
            BackOp::AdaptivePoolF { x, mode, argmax } => {
                if needs(*x) {
                    let xs = nodes[x.0].value.shape();
                    let (b, c, f, t) = dims4(xs);
                    let os = nodes[i].value.shape();
                    let target = os[2];
                    let gx = Self::accumulate(grads, *x, b * c * f * t);
                    match mode {
                        PoolMode::Max => {
                            for (o, &src) in argmax.iter().enumerate() {
                                gx[src] += g[o];
                            }
                        }
                        PoolMode::Avg => {
                            for bc in 0..b * c {
                                let plane = bc * f * t;
                                for o in 0..target {
                                    let start = o * f / target;
                                    let end = (o + 1) * f / target;
                                    let orow = (bc * target + o) * t;
                                    let scale = 1.0 / (end - start) as f64;
                                    for ti in 0..t {
                                        let gv = g[orow + ti] * scale;
                                        for fi in start..end {
                                            gx[plane + fi * t + ti] += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            BackOp::EwMul { a, b } => {
                let sa = nodes[a.0].value.shape().to_vec();
                let sb = nodes[b.0].value.shape().to_vec();
                let so = nodes[i].value.shape().to_vec();
                let ad = nodes[a.0].value.data();
                let bd = nodes[b.0].value.data();
                if needs(*a) {
                    let ga = Self::accumulate(grads, *a, ad.len());
                    ew_walk(&so, &sa, &sb, |flat, ia, ib| ga[ia] += g[flat] * bd[ib]);
                }
                if needs(*b) {
                    let gb = Self::accumulate(grads, *b, bd.len());
                    ew_walk(&so, &sa, &sb, |flat, ia, ib| gb[ib] += g[flat] * ad[ia]);
                }
            }
            BackOp::EwAdd { a, b } => {
                let sa = nodes[a.0].value.shape().to_vec();
                let sb = nodes[b.0].value.shape().to_vec();
                let so = nodes[i].value.shape().to_vec();
                if needs(*a) {
                    let ga = Self::accumulate(grads, *a, nodes[a.0].value.numel());
                    ew_walk(&so, &sa, &sb, |flat, ia, _| ga[ia] += g[flat]);
                }
                if needs(*b) {
                    let gb = Self::accumulate(grads, *b, nodes[b.0].value.numel());
                    ew_walk(&so, &sa, &sb, |flat, _, ib| gb[ib] += g[flat]);
                }
            }
            BackOp::BilinearResizeF { x } => {
                if needs(*x) {
                    let xs = nodes[x.0].value.shape();
                    let (b, c, f, t) = dims4(xs);
                    let target = nodes[i].value.shape()[2];
                    let taps = resize_taps(f, target);
                    let gx = Self::accumulate(grads, *x, b * c * f * t);
                    for bc in 0..b * c {
                        let plane = bc * f * t;
                        for (o, &(f0, f1, w)) in taps.iter().enumerate() {
                            let orow = (bc * target + o) * t;
                            for ti in 0..t {
                                gx[plane + f0 * t + ti] += (1.0 - w) * g[orow + ti];
                                gx[plane + f1 * t + ti] += w * g[orow + ti];
                            }
                        }
                    }
                }
            }
            BackOp::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (bn, n) = (xs[0], xs[1]);
                let m = nodes[w.0].value.shape()[0];
                let xd = nodes[x.0].value.data();
                let wd = nodes[w.0].value.data();
                if needs(*x) {
                    let gx = Self::accumulate(grads, *x, bn * n);
                    for bi in 0..bn {
                        for mi in 0..m {
                            let gv = g[bi * m + mi];
                            if gv == 0.0 {
                                continue;
                            }
                            let (xrow, wrow) = (bi * n, mi * n);
                            for ni in 0..n {
                                gx[xrow + ni] += gv * wd[wrow + ni];
                            }
                        }
                    }
                }
                if needs(*w) {
                    let gw = Self::accumulate(grads, *w, m * n);
                    for bi in 0..bn {
                        for mi in 0..m {
                            let gv = g[bi * m + mi];
                            if gv == 0.0 {
                                continue;
                            }
                            let (xrow, wrow) = (bi * n, mi * n);
                            for ni in 0..n {
                                gw[wrow + ni] += gv * xd[xrow + ni];
                            }
                        }
                    }
                }
                if needs(*b) {
                    let gb = Self::accumulate(grads, *b, m);
                    for bi in 0..bn {
                        for mi in 0..m {
                            gb[mi] += g[bi * m + mi];
                        }
                    }
                }
            }
            BackOp::Flatten { x } => {
                if needs(*x) {
                    let gx = Self::accumulate(grads, *x, nodes[x.0].value.numel());
                    for (k, &gv) in g.iter().enumerate() {
                        gx[k] += gv;
                    }
                }
            }
            BackOp::Concat { parts, axis } => {
                let so = nodes[i].value.shape().to_vec();
                let outer: usize = so[..*axis].iter().product();
                let inner: usize = so[*axis + 1..].iter().product();
                let total = so[*axis];
                let mut base = 0;
                for &p in parts {
                    let e = nodes[p.0].value.shape()[*axis];
                    if needs(p) {
                        let gp = Self::accumulate(grads, p, nodes[p.0].value.numel());
                        for o in 0..outer {
                            let src = (o * total + base) * inner;
                            let dst = o * e * inner;
                            for k in 0..e * inner {
                                gp[dst + k] += g[src + k];
                            }
                        }
                    }
                    base += e;
                }
            }
            BackOp::Slice { x, axis, start } => {
                if needs(*x) {
                    let xs = nodes[x.0].value.shape().to_vec();
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[*axis + 1..].iter().product();
                    let e = xs[*axis];
                    let len = nodes[i].value.shape()[*axis];
                    let gx = Self::accumulate(grads, *x, nodes[x.0].value.numel());
                    for o in 0..outer {
                        let dst = (o * e + start) * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            gx[dst + k] += g[src + k];
                        }
                    }
                }
            }
            BackOp::MaxPool2 { x, argmax } => {
                if needs(*x) {
                    let gx = Self::accumulate(grads, *x, nodes[x.0].value.numel());
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                }
            }
            BackOp::CrossEntropy { logits, labels } => {
                if needs(*logits) {
                    let ls = nodes[logits.0].value.shape();
                    let (b, m) = (ls[0], ls[1]);
                    let ld = nodes[logits.0].value.data();
                    let scale = g[0] / b as f64;
                    let gl = Self::accumulate(grads, *logits, b * m);
                    for (bi, &label) in labels.iter().enumerate() {
                        let row = &ld[bi * m..(bi + 1) * m];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&z| (z - mx).exp()).sum();
                        for mi in 0..m {
                            let p = (row[mi] - mx).exp() / denom;
                            let onehot = if mi == label { 1.0 } else { 0.0 };
                            gl[bi * m + mi] += scale * (p - onehot);
                        }
                    }
                }
            }
            BackOp::SumAll { x } => {
                if needs(*x) {
                    let gx = Self::accumulate(grads, *x, nodes[x.0].value.numel());
                    for gv in gx.iter_mut() {
                        *gv += g[0];
                    }
                }
            }
        }
    }
}

/// Interpolation taps (left index, right index, right weight) for resizing
/// F source rows to `target` rows with edge-clamped sample centers.
fn resize_taps(f: usize, target: usize) -> Vec<(usize, usize, f64)> {
    (0..target)
        .map(|o| {
            let p = (o as f64 + 0.5) * f as f64 / target as f64 - 0.5;
            let p = p.clamp(0.0, (f - 1) as f64);
            let f0 = p.floor() as usize;
            let f1 = (f0 + 1).min(f - 1);
            (f0, f1, p - f0 as f64)
        })
        .collect()
}

/// Visit every output element of a same-rank broadcast, yielding the flat
/// output offset and the operands' (possibly stride-0) offsets. Rank ≤ 4.
fn ew_walk(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut visit: impl FnMut(usize, usize, usize),
) {
    // normalize to rank 4 by prepending size-1 axes
    let mut o4 = [1usize; 4];
    let mut a4 = [1usize; 4];
    let mut b4 = [1usize; 4];
    let off = 4 - out.len();
    o4[off..].copy_from_slice(out);
    a4[off..].copy_from_slice(sa);
    b4[off..].copy_from_slice(sb);
    let stra = bcast_strides(&a4);
    let strb = bcast_strides(&b4);
    let mut flat = 0;
    for i0 in 0..o4[0] {
        for i1 in 0..o4[1] {
            for i2 in 0..o4[2] {
                let abase = i0 * stra[0] + i1 * stra[1] + i2 * stra[2];
                let bbase = i0 * strb[0] + i1 * strb[1] + i2 * strb[2];
                for i3 in 0..o4[3] {
                    visit(flat, abase + i3 * stra[3], bbase + i3 * strb[3]);
                    flat += 1;
                }
            }
        }
    }
}
