//! Network assembly and complexity accounting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::Duration;
use crate::graph::NodeId;
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::blocks::{Cfeb, SmgaaBlock};
use super::layers::{jp, Conv2d, Linear, ParamKind, Session, Visitable};
use super::ModelConfig;

/// The detector: pointwise stem, stage-1 attention at full resolution, two
/// pooled convolutional stages, stage-2 attention at quarter resolution, and
/// a linear two-class head. One model per clip duration; the classifier
/// width is fixed by the duration's frame count.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub duration: Duration,
    pub stem: Conv2d,
    pub stage1: Option<SmgaaBlock>,
    pub cfeb1: Cfeb,
    pub cfeb2: Cfeb,
    pub stage2: Option<SmgaaBlock>,
    pub classifier: Linear,
}

impl Network {
    pub fn new(config: &ModelConfig, duration: Duration, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c1, c2) = config.cfeb_channels;
        let s = config.stem_channels;
        let (f1, f2) = config.stage_f();
        let t2 = duration.frames().div_ceil(2).div_ceil(2);
        let v = config.variant;
        Ok(Network {
            config: config.clone(),
            duration,
            stem: Conv2d::pointwise(1, s, &mut rng),
            stage1: v
                .stage1()
                .then(|| SmgaaBlock::new(s, f1, config.granularity.0, config, &mut rng)),
            cfeb1: Cfeb::new(s, c1, &mut rng),
            cfeb2: Cfeb::new(c1, c2, &mut rng),
            stage2: v
                .stage2()
                .then(|| SmgaaBlock::new(c2, f2, config.granularity.1, config, &mut rng)),
            classifier: Linear::new(c2 * f2 * t2, 2, &mut rng),
        })
    }

    /// Run a batch [B, 1, input_f, frames] through to logits [B, 2].
    pub fn forward(&self, s: &mut Session, x: NodeId) -> Result<NodeId> {
        let shape = s.graph.shape(x).to_vec();
        let want = [1, self.config.input_f, self.duration.frames()];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::config(format!(
                "input shape {shape:?} does not match [B, {}, {}, {}] for a {}s model",
                want[0], want[1], want[2], self.duration
            )));
        }
        let mut y = self.stem.forward(s, "stem", x)?;
        if let Some(b) = &self.stage1 {
            y = b.forward(s, "stage1", y)?;
        }
        y = self.cfeb1.forward(s, "cfeb1", y)?;
        y = self.cfeb2.forward(s, "cfeb2", y)?;
        if let Some(b) = &self.stage2 {
            y = b.forward(s, "stage2", y)?;
        }
        let flat = s.graph.flatten(y)?;
        self.classifier.forward(s, "classifier", flat)
    }
}

impl Visitable for Network {
    fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.stem.visit(&jp(path, "stem"), f);
        if let Some(b) = &self.stage1 {
            b.visit(&jp(path, "stage1"), f);
        }
        self.cfeb1.visit(&jp(path, "cfeb1"), f);
        self.cfeb2.visit(&jp(path, "cfeb2"), f);
        if let Some(b) = &self.stage2 {
            b.visit(&jp(path, "stage2"), f);
        }
        self.classifier.visit(&jp(path, "classifier"), f);
    }
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.stem.visit_mut(&jp(path, "stem"), f);
        if let Some(b) = &mut self.stage1 {
            b.visit_mut(&jp(path, "stage1"), f);
        }
        self.cfeb1.visit_mut(&jp(path, "cfeb1"), f);
        self.cfeb2.visit_mut(&jp(path, "cfeb2"), f);
        if let Some(b) = &mut self.stage2 {
            b.visit_mut(&jp(path, "stage2"), f);
        }
        self.classifier.visit_mut(&jp(path, "classifier"), f);
    }
}

/// Trainable parameter count (buffers excluded).
pub fn count_params(net: &Network) -> usize {
    let mut total = 0;
    net.visit("", &mut |_, t, kind| {
        if kind == ParamKind::Param {
            total += t.numel();
        }
    });
    total
}

fn conv_flops(cout: usize, cin_g: usize, kf: usize, kt: usize, fo: usize, to: usize) -> u64 {
    2 * (cout * cin_g * kf * kt * fo * to) as u64
}

fn stage_flops(config: &ModelConfig, c: usize, f: usize, t: usize, g: usize) -> u64 {
    let v = config.variant;
    let mut total = 0;
    if v.use_pcem() {
        total += conv_flops(c, 1, 3, 3, f, t); // depthwise detail
        total += conv_flops(c, c, 1, 1, f, t); // its pointwise mix
        total += conv_flops(c / config.kappa, c, 1, 1, 1, 1); // channel squeeze
        total += conv_flops(c, c / config.kappa, 1, 1, 1, 1);
        total += conv_flops(c, c, 3, 1, f, t); // factorized context
        total += conv_flops(c, c, 1, 3, f, t);
        total += conv_flops(c, c, 1, 1, f, t); // output mix
    }
    if v.use_mgaa() {
        total += g as u64
            * (conv_flops(c / config.kappa, c, 1, 1, 1, 1) + conv_flops(c, c / config.kappa, 1, 1, 1, 1));
    }
    if v.use_fcem() {
        for &k in &config.k_list {
            total += conv_flops(c / config.kappa2, c, k, 1, f, t);
        }
        let concat_c = 3 * (c / config.kappa2) + 3 * c;
        total += conv_flops(c, concat_c, 1, 1, f, t);
        total += conv_flops(c, 1, config.afi_kernel, 1, f, t); // depthwise gate
    }
    total
}

/// Multiply-accumulate count (x2) of one forward pass at batch 1, summed over
/// convolution and linear layers; normalization, activations, pooling and
/// resampling are excluded from the tally.
pub fn count_flops(config: &ModelConfig, duration: Duration) -> u64 {
    let (c1, c2) = config.cfeb_channels;
    let s = config.stem_channels;
    let (f1, f2) = config.stage_f();
    let t1 = duration.frames();
    let th = t1.div_ceil(2);
    let tq = th.div_ceil(2);
    let v = config.variant;

    let mut total = conv_flops(s, 1, 1, 1, f1, t1);
    if v.stage1() {
        total += stage_flops(config, s, f1, t1, config.granularity.0);
    }
    total += conv_flops(c1, s, 3, 3, f1, t1);
    total += conv_flops(c2, c1, 3, 3, f1 / 2, th);
    if v.stage2() {
        total += stage_flops(config, c2, f2, tq, config.granularity.1);
    }
    total += 2 * (2 * c2 * f2 * tq) as u64;
    total
}
