//! Attention blocks and the plain convolutional feature extractor.

use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeId, PoolMode};
use crate::Result;

use super::layers::{jp, BatchNorm, Conv2d, Session, Visitable};
use super::{ModelConfig, ParamKind};
use crate::tensor::Tensor;

/// Positional-detail branch: depthwise 3x3, normalize, GELU, pointwise mix,
/// squashed to a per-cell gate.
#[derive(Debug, Clone)]
pub struct Pd {
    pub dw: Conv2d,
    pub bn: BatchNorm,
    pub pw: Conv2d,
}

impl Pd {
    pub fn new(c: usize, rng: &mut ChaCha8Rng) -> Self {
        Pd {
            dw: Conv2d::new(c, c, (3, 3), (1, 1, 1, 1), c, rng),
            bn: BatchNorm::new(c),
            pw: Conv2d::pointwise(c, c, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let y = self.dw.forward(s, &jp(path, "dw"), x)?;
        let y = self.bn.forward(s, &jp(path, "bn"), y)?;
        let y = s.graph.gelu(y);
        let y = self.pw.forward(s, &jp(path, "pw"), y)?;
        Ok(s.graph.sigmoid(y))
    }
}

impl Visitable for Pd {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.dw.visit(&jp(path, "dw"), f);
        self.bn.visit(&jp(path, "bn"), f);
        self.pw.visit(&jp(path, "pw"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.dw.visit_mut(&jp(path, "dw"), f);
        self.bn.visit_mut(&jp(path, "bn"), f);
        self.pw.visit_mut(&jp(path, "pw"), f);
    }
}

/// Channel-attention branch: squeeze to [B,C,1,1], bottleneck, per-channel gate.
#[derive(Debug, Clone)]
pub struct Ca {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl Ca {
    pub fn new(c: usize, kappa: usize, rng: &mut ChaCha8Rng) -> Self {
        Ca { reduce: Conv2d::pointwise(c, c / kappa, rng), expand: Conv2d::pointwise(c / kappa, c, rng) }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let y = s.graph.global_avg_pool(x)?;
        let y = self.reduce.forward(s, &jp(path, "reduce"), y)?;
        let y = s.graph.gelu(y);
        let y = self.expand.forward(s, &jp(path, "expand"), y)?;
        Ok(s.graph.sigmoid(y))
    }
}

impl Visitable for Ca {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.reduce.visit(&jp(path, "reduce"), f);
        self.expand.visit(&jp(path, "expand"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.reduce.visit_mut(&jp(path, "reduce"), f);
        self.expand.visit_mut(&jp(path, "expand"), f);
    }
}

/// Time-frequency context branch: factorized (3,1) then (1,3) convolutions,
/// normalized and GELU-activated. Additive, not a gate.
#[derive(Debug, Clone)]
pub struct Tfc {
    pub vt: Conv2d,
    pub vf: Conv2d,
    pub bn: BatchNorm,
}

impl Tfc {
    pub fn new(c: usize, rng: &mut ChaCha8Rng) -> Self {
        Tfc {
            vt: Conv2d::new(c, c, (3, 1), (1, 1, 0, 0), 1, rng),
            vf: Conv2d::new(c, c, (1, 3), (0, 0, 1, 1), 1, rng),
            bn: BatchNorm::new(c),
        }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let y = self.vt.forward(s, &jp(path, "vt"), x)?;
        let y = self.vf.forward(s, &jp(path, "vf"), y)?;
        let y = self.bn.forward(s, &jp(path, "bn"), y)?;
        Ok(s.graph.gelu(y))
    }
}

impl Visitable for Tfc {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.vt.visit(&jp(path, "vt"), f);
        self.vf.visit(&jp(path, "vf"), f);
        self.bn.visit(&jp(path, "bn"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.vt.visit_mut(&jp(path, "vt"), f);
        self.vf.visit_mut(&jp(path, "vf"), f);
        self.bn.visit_mut(&jp(path, "bn"), f);
    }
}

/// Positional-context enhancement: input gated by the positional and channel
/// branches, context added, mixed by a pointwise convolution.
#[derive(Debug, Clone)]
pub struct Pcem {
    pub pd: Pd,
    pub ca: Ca,
    pub tfc: Tfc,
    pub vc: Conv2d,
}

impl Pcem {
    pub fn new(c: usize, kappa: usize, rng: &mut ChaCha8Rng) -> Self {
        Pcem {
            pd: Pd::new(c, rng),
            ca: Ca::new(c, kappa, rng),
            tfc: Tfc::new(c, rng),
            vc: Conv2d::pointwise(c, c, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let p = self.pd.forward(s, &jp(path, "pd"), x)?;
        let c = self.ca.forward(s, &jp(path, "ca"), x)?;
        let t = self.tfc.forward(s, &jp(path, "tfc"), x)?;
        let gated = s.graph.mul(x, p)?;
        let gated = s.graph.mul(gated, c)?;
        let summed = s.graph.add(gated, t)?;
        self.vc.forward(s, &jp(path, "vc"), summed)
    }
}

impl Visitable for Pcem {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.pd.visit(&jp(path, "pd"), f);
        self.ca.visit(&jp(path, "ca"), f);
        self.tfc.visit(&jp(path, "tfc"), f);
        self.vc.visit(&jp(path, "vc"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.pd.visit_mut(&jp(path, "pd"), f);
        self.ca.visit_mut(&jp(path, "ca"), f);
        self.tfc.visit_mut(&jp(path, "tfc"), f);
        self.vc.visit_mut(&jp(path, "vc"), f);
    }
}

/// One per-band channel gate of the band-attention module.
#[derive(Debug, Clone)]
pub struct BandGate {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

/// Band attention: split F into `g` equal bands, gate each band's channels
/// from its own pooled summary, stitch back together, add the input.
#[derive(Debug, Clone)]
pub struct Mgaa {
    pub bands: Vec<BandGate>,
    pub g: usize,
}

impl Mgaa {
    pub fn new(c: usize, kappa: usize, g: usize, rng: &mut ChaCha8Rng) -> Self {
        let bands = (0..g)
            .map(|_| BandGate {
                reduce: Conv2d::pointwise(c, c / kappa, rng),
                expand: Conv2d::pointwise(c / kappa, c, rng),
            })
            .collect();
        Mgaa { bands, g }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let f = s.graph.shape(x)[2];
        let fb = f / self.g;
        let mut gated = Vec::with_capacity(self.g);
        for (i, band) in self.bands.iter().enumerate() {
            let part = s.graph.slice(x, 2, i * fb, fb)?;
            let y = s.graph.global_avg_pool(part)?;
            let y = band.reduce.forward(s, &jp(path, &format!("band{i}.reduce")), y)?;
            let y = s.graph.gelu(y);
            let y = band.expand.forward(s, &jp(path, &format!("band{i}.expand")), y)?;
            let gate = s.graph.sigmoid(y);
            gated.push(s.graph.mul(part, gate)?);
        }
        let stitched = s.graph.concat(&gated, 2)?;
        s.graph.add(stitched, x)
    }
}

impl Visitable for Mgaa {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        for (i, band) in self.bands.iter().enumerate() {
            band.reduce.visit(&jp(path, &format!("band{i}.reduce")), f);
            band.expand.visit(&jp(path, &format!("band{i}.expand")), f);
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        for (i, band) in self.bands.iter_mut().enumerate() {
            band.reduce.visit_mut(&jp(path, &format!("band{i}.reduce")), f);
            band.expand.visit_mut(&jp(path, &format!("band{i}.expand")), f);
        }
    }
}

/// One local multi-scale branch: frequency kernel (k,1) into a channel
/// bottleneck, normalized and GELU-activated.
#[derive(Debug, Clone)]
pub struct MfaBranch {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl MfaBranch {
    pub fn new(c: usize, kappa2: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        MfaBranch { conv: Conv2d::freq(c, c / kappa2, k, 1, rng), bn: BatchNorm::new(c / kappa2) }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let y = self.conv.forward(s, &jp(path, "conv"), x)?;
        let y = self.bn.forward(s, &jp(path, "bn"), y)?;
        Ok(s.graph.gelu(y))
    }
}

impl Visitable for MfaBranch {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.conv.visit(&jp(path, "conv"), f);
        self.bn.visit(&jp(path, "bn"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.conv.visit_mut(&jp(path, "conv"), f);
        self.bn.visit_mut(&jp(path, "bn"), f);
    }
}

/// Frequency-context enhancement: three local branches and three pooled
/// global views fused by a pointwise convolution, then gated by a depthwise
/// frequency attention map of the block input.
#[derive(Debug, Clone)]
pub struct Fcem {
    pub branches: Vec<MfaBranch>,
    /// Adaptive pooling extents of the three global views at this stage.
    pub pool_targets: [usize; 3],
    pub fuse: Conv2d,
    pub fuse_bn: BatchNorm,
    pub afi: Conv2d,
}

impl Fcem {
    pub fn new(c: usize, f: usize, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let k2 = config.kappa2;
        let branches =
            config.k_list.iter().map(|&k| MfaBranch::new(c, k2, k, rng)).collect::<Vec<_>>();
        let concat_c = 3 * (c / k2) + 3 * c;
        Fcem {
            branches,
            pool_targets: config.scaled_pool_targets(f),
            fuse: Conv2d::pointwise(concat_c, c, rng),
            fuse_bn: BatchNorm::new(c),
            afi: Conv2d::freq(c, c, config.afi_kernel, c, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let f = s.graph.shape(x)[2];
        let mut parts = Vec::with_capacity(6);
        for (i, branch) in self.branches.iter().enumerate() {
            parts.push(branch.forward(s, &jp(path, &format!("branch{i}")), x)?);
        }
        let modes = [PoolMode::Max, PoolMode::Max, PoolMode::Avg];
        for (&target, mode) in self.pool_targets.iter().zip(modes) {
            let pooled = s.graph.adaptive_pool_f(x, target, mode)?;
            parts.push(s.graph.bilinear_resize_f(pooled, f)?);
        }
        let cat = s.graph.concat(&parts, 1)?;
        let fused = self.fuse.forward(s, &jp(path, "fuse"), cat)?;
        let fused = self.fuse_bn.forward(s, &jp(path, "fuse_bn"), fused)?;
        let fused = s.graph.gelu(fused);
        let gate = self.afi.forward(s, &jp(path, "afi"), x)?;
        let gate = s.graph.sigmoid(gate);
        s.graph.mul(fused, gate)
    }
}

impl Visitable for Fcem {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        for (i, branch) in self.branches.iter().enumerate() {
            branch.visit(&jp(path, &format!("branch{i}")), f);
        }
        self.fuse.visit(&jp(path, "fuse"), f);
        self.fuse_bn.visit(&jp(path, "fuse_bn"), f);
        self.afi.visit(&jp(path, "afi"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        for (i, branch) in self.branches.iter_mut().enumerate() {
            branch.visit_mut(&jp(path, &format!("branch{i}")), f);
        }
        self.fuse.visit_mut(&jp(path, "fuse"), f);
        self.fuse_bn.visit_mut(&jp(path, "fuse_bn"), f);
        self.afi.visit_mut(&jp(path, "afi"), f);
    }
}

/// One attention stage; disabled sub-blocks pass their input through.
#[derive(Debug, Clone)]
pub struct SmgaaBlock {
    pub pcem: Option<Pcem>,
    pub mgaa: Option<Mgaa>,
    pub fcem: Option<Fcem>,
}

impl SmgaaBlock {
    pub fn new(c: usize, f: usize, g: usize, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let v = config.variant;
        SmgaaBlock {
            pcem: v.use_pcem().then(|| Pcem::new(c, config.kappa, rng)),
            mgaa: v.use_mgaa().then(|| Mgaa::new(c, config.kappa, g, rng)),
            fcem: v.use_fcem().then(|| Fcem::new(c, f, config, rng)),
        }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let mut y = x;
        if let Some(p) = &self.pcem {
            y = p.forward(s, &jp(path, "pcem"), y)?;
        }
        if let Some(m) = &self.mgaa {
            y = m.forward(s, &jp(path, "mgaa"), y)?;
        }
        if let Some(fc) = &self.fcem {
            y = fc.forward(s, &jp(path, "fcem"), y)?;
        }
        Ok(y)
    }
}

impl Visitable for SmgaaBlock {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        if let Some(p) = &self.pcem {
            p.visit(&jp(path, "pcem"), f);
        }
        if let Some(m) = &self.mgaa {
            m.visit(&jp(path, "mgaa"), f);
        }
        if let Some(fc) = &self.fcem {
            fc.visit(&jp(path, "fcem"), f);
        }
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        if let Some(p) = &mut self.pcem {
            p.visit_mut(&jp(path, "pcem"), f);
        }
        if let Some(m) = &mut self.mgaa {
            m.visit_mut(&jp(path, "mgaa"), f);
        }
        if let Some(fc) = &mut self.fcem {
            fc.visit_mut(&jp(path, "fcem"), f);
        }
    }
}

/// Plain convolutional stage: 3x3 convolution, normalize, GELU, 2x2 max pool
/// (frequency halves exactly, time rounds up).
#[derive(Debug, Clone)]
pub struct Cfeb {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl Cfeb {
    pub fn new(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Cfeb { conv: Conv2d::same(cin, cout, 3, rng), bn: BatchNorm::new(cout) }
    }

    pub fn forward(&self, s: &mut Session, path: &str, x: NodeId) -> Result<NodeId> {
        let y = self.conv.forward(s, &jp(path, "conv"), x)?;
        let y = self.bn.forward(s, &jp(path, "bn"), y)?;
        let y = s.graph.gelu(y);
        s.graph.max_pool2(y)
    }
}

impl Visitable for Cfeb {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.conv.visit(&jp(path, "conv"), f);
        self.bn.visit(&jp(path, "bn"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.conv.visit_mut(&jp(path, "conv"), f);
        self.bn.visit_mut(&jp(path, "bn"), f);
    }
}
