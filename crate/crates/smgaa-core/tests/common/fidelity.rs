//! Naive recomputation of every published block composition, shared by the
//! fidelity tests and the acceptance gate. Each block is rebuilt from its
//! owned tensors with loop-level code and compared against the graph forward.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smgaa_core::model::{
    BatchNorm, Cfeb, Conv2d, Fcem, Mgaa, Mode, ModelConfig, Network, Pcem, Session, Variant,
    Visitable,
};
use smgaa_core::tensor::Tensor;

use super::{naive_adaptive_pool_f, naive_bilinear_resize_f, naive_conv2d, naive_gelu, naive_linear, rand_tensor, rng};

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

fn conv(x: &Tensor, c: &Conv2d) -> Tensor {
    naive_conv2d(x, &c.weight, Some(&c.bias), c.pad, c.groups)
}

fn bn_eval(x: &Tensor, bn: &BatchNorm) -> Tensor {
    let (c, f, t) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ci = (i / (f * t)) % c;
            let scale = bn.gamma.data()[ci] / (bn.running_var.data()[ci] + bn.eps).sqrt();
            (v - bn.running_mean.data()[ci]) * scale + bn.beta.data()[ci]
        })
        .collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

fn gap(x: &Tensor) -> Tensor {
    let (b, c, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Tensor::zeros(&[b, c, 1, 1]);
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * f * t;
            out.data_mut()[bi * c + ci] =
                x.data()[base..base + f * t].iter().sum::<f64>() / (f * t) as f64;
        }
    }
    out
}

/// Multiply [B,C,F,T] by a per-channel gate [B,C,1,1].
fn scale_channels(x: &Tensor, gate: &Tensor) -> Tensor {
    let (f, t) = (x.shape()[2], x.shape()[3]);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * gate.data()[i / (f * t)])
        .collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

fn concat_axis(parts: &[&Tensor], axis: usize) -> Tensor {
    let mut shape = parts[0].shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Tensor::zeros(&shape);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let total = shape[axis];
    let mut offset = 0;
    for p in parts {
        let ext = p.shape()[axis];
        for o in 0..outer {
            for e in 0..ext {
                for i in 0..inner {
                    out.data_mut()[(o * total + offset + e) * inner + i] =
                        p.data()[(o * ext + e) * inner + i];
                }
            }
        }
        offset += ext;
    }
    out
}

fn slice_f(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (b, c, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Tensor::zeros(&[b, c, len, t]);
    for bi in 0..b {
        for ci in 0..c {
            for fi in 0..len {
                for ti in 0..t {
                    out.data_mut()[((bi * c + ci) * len + fi) * t + ti] =
                        x.data()[((bi * c + ci) * f + start + fi) * t + ti];
                }
            }
        }
    }
    out
}

fn max_pool2(x: &Tensor) -> Tensor {
    let (b, c, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (fo, to) = (f / 2, t.div_ceil(2));
    let mut out = Tensor::zeros(&[b, c, fo, to]);
    for bi in 0..b {
        for ci in 0..c {
            for foi in 0..fo {
                for toi in 0..to {
                    let mut best = f64::NEG_INFINITY;
                    for df in 0..2 {
                        for dt in 0..2 {
                            let (fi, ti) = (2 * foi + df, 2 * toi + dt);
                            if fi < f && ti < t {
                                best = best.max(x.data()[((bi * c + ci) * f + fi) * t + ti]);
                            }
                        }
                    }
                    out.data_mut()[((bi * c + ci) * fo + foi) * to + toi] = best;
                }
            }
        }
    }
    out
}

// ── block recompositions ────────────────────────────────────────────────

pub fn pcem_naive(p: &Pcem, x: &Tensor) -> Tensor {
    let pd = map(&conv(&map(&bn_eval(&conv(x, &p.pd.dw), &p.pd.bn), naive_gelu), &p.pd.pw), sigmoid);
    let ca = map(&conv(&map(&conv(&gap(x), &p.ca.reduce), naive_gelu), &p.ca.expand), sigmoid);
    let tfc = map(&bn_eval(&conv(&conv(x, &p.tfc.vt), &p.tfc.vf), &p.tfc.bn), naive_gelu);
    let gated = scale_channels(&hadamard(x, &pd), &ca);
    conv(&add(&gated, &tfc), &p.vc)
}

pub fn mgaa_naive(m: &Mgaa, x: &Tensor) -> Tensor {
    let f = x.shape()[2];
    let fb = f / m.g;
    let parts: Vec<Tensor> = m
        .bands
        .iter()
        .enumerate()
        .map(|(i, band)| {
            let part = slice_f(x, i * fb, fb);
            let gate = map(
                &conv(&map(&conv(&gap(&part), &band.reduce), naive_gelu), &band.expand),
                sigmoid,
            );
            scale_channels(&part, &gate)
        })
        .collect();
    let refs: Vec<&Tensor> = parts.iter().collect();
    add(&concat_axis(&refs, 2), x)
}

pub fn fcem_naive(fc: &Fcem, x: &Tensor) -> Tensor {
    let f = x.shape()[2];
    let mut parts: Vec<Tensor> = fc
        .branches
        .iter()
        .map(|br| map(&bn_eval(&conv(x, &br.conv), &br.bn), naive_gelu))
        .collect();
    for (&target, &is_max) in fc.pool_targets.iter().zip(&[true, true, false]) {
        let pooled = naive_adaptive_pool_f(x, target, is_max);
        parts.push(naive_bilinear_resize_f(&pooled, f));
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    let fused = map(&bn_eval(&conv(&concat_axis(&refs, 1), &fc.fuse), &fc.fuse_bn), naive_gelu);
    let gate = map(&conv(x, &fc.afi), sigmoid);
    hadamard(&fused, &gate)
}

pub fn cfeb_naive(cf: &Cfeb, x: &Tensor) -> Tensor {
    max_pool2(&map(&bn_eval(&conv(x, &cf.conv), &cf.bn), naive_gelu))
}

pub fn network_naive(net: &Network, x: &Tensor) -> Tensor {
    let mut y = conv(x, &net.stem);
    if let Some(b) = &net.stage1 {
        y = block_naive(b, &y);
    }
    y = cfeb_naive(&net.cfeb1, &y);
    y = cfeb_naive(&net.cfeb2, &y);
    if let Some(b) = &net.stage2 {
        y = block_naive(b, &y);
    }
    let flat =
        Tensor::from_vec(&[y.shape()[0], y.numel() / y.shape()[0]], y.data().to_vec()).unwrap();
    naive_linear(&flat, &net.classifier.weight, &net.classifier.bias)
}

fn block_naive(b: &smgaa_core::model::SmgaaBlock, x: &Tensor) -> Tensor {
    let mut y = x.clone();
    if let Some(p) = &b.pcem {
        y = pcem_naive(p, &y);
    }
    if let Some(m) = &b.mgaa {
        y = mgaa_naive(m, &y);
    }
    if let Some(fc) = &b.fcem {
        y = fcem_naive(fc, &y);
    }
    y
}

// ── harness ─────────────────────────────────────────────────────────────

/// Overwrite every owned tensor with generic values so no identity in the
/// composition can hide behind default-initialized statistics.
pub fn randomize(block: &mut dyn Visitable, seed: u64) {
    let mut r = rng(seed);
    block.visit_mut("", &mut |path, t, _| {
        let range = if path.ends_with(".running_var") {
            0.5..2.0
        } else if path.ends_with(".running_mean") {
            -0.5..0.5
        } else {
            -0.6..0.6
        };
        t.data_mut().iter_mut().for_each(|v| *v = r.random_range(range.clone()));
    });
}

pub fn graph_forward(
    x: &Tensor,
    f: impl FnOnce(&mut Session, smgaa_core::graph::NodeId) -> smgaa_core::Result<smgaa_core::graph::NodeId>,
) -> Tensor {
    let mut s = Session::new(Mode::Eval);
    let xid = s.graph.leaf_owned(x.clone());
    let out = f(&mut s, xid).unwrap();
    s.graph.tensor(out).clone()
}

pub fn max_rel_err(got: &Tensor, want: &Tensor) -> f64 {
    assert_eq!(got.shape(), want.shape(), "shape mismatch");
    got.data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max)
}

pub struct FidelityCase {
    pub name: &'static str,
    pub err: f64,
}

/// Compare every block, and the assembled network, against its naive
/// recomposition. Returns the worst relative error per case.
pub fn run_all(seed: u64) -> Vec<FidelityCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();
    let config = ModelConfig::reduced();

    let mut build = ChaCha8Rng::seed_from_u64(seed ^ 0xb10c);

    let x = rand_tensor(&[2, 8, 12, 7], &mut r);
    let mut pcem = Pcem::new(8, 4, &mut build);
    randomize(&mut pcem, seed + 1);
    let got = graph_forward(&x, |s, xid| pcem.forward(s, "p", xid));
    cases.push(FidelityCase { name: "positional-context enhancement", err: max_rel_err(&got, &pcem_naive(&pcem, &x)) });

    let mut mgaa = Mgaa::new(8, 4, 3, &mut build);
    randomize(&mut mgaa, seed + 2);
    let got = graph_forward(&x, |s, xid| mgaa.forward(s, "m", xid));
    cases.push(FidelityCase { name: "band attention", err: max_rel_err(&got, &mgaa_naive(&mgaa, &x)) });

    let mut fcem = Fcem::new(8, 12, &config, &mut build);
    randomize(&mut fcem, seed + 3);
    let got = graph_forward(&x, |s, xid| fcem.forward(s, "f", xid));
    cases.push(FidelityCase { name: "frequency-context enhancement", err: max_rel_err(&got, &fcem_naive(&fcem, &x)) });

    let xc = rand_tensor(&[2, 3, 8, 7], &mut r);
    let mut cfeb = Cfeb::new(3, 6, &mut build);
    randomize(&mut cfeb, seed + 4);
    let got = graph_forward(&xc, |s, xid| cfeb.forward(s, "c", xid));
    cases.push(FidelityCase { name: "convolutional stage", err: max_rel_err(&got, &cfeb_naive(&cfeb, &xc)) });

    for variant in [Variant::Full, Variant::NoPcem, Variant::DeepOnly] {
        let cfg = config.clone().with_variant(variant);
        let mut net = Network::new(&cfg, smgaa_core::features::Duration::Half, seed ^ 7).unwrap();
        randomize(&mut net, seed + 5);
        let xin = rand_tensor(&[2, 1, cfg.input_f, 16], &mut r);
        let got = graph_forward(&xin, |s, xid| net.forward(s, xid));
        let name = match variant {
            Variant::Full => "assembled network",
            Variant::NoPcem => "assembled network without the gate stage",
            _ => "assembled network, deep stage only",
        };
        cases.push(FidelityCase { name, err: max_rel_err(&got, &network_naive(&net, &xin)) });
    }

    cases
}

/// Same comparison at the production stage-1 geometry: 16 channels over a
/// 60-bin map with the default attention constants (reduction 8, branch
/// reduction 2, frequency kernels {20,15,10}, pool targets (20,30,20),
/// 4 bands).
pub fn run_default_constants(seed: u64) -> Vec<FidelityCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();
    let config = ModelConfig::default();
    let mut build = ChaCha8Rng::seed_from_u64(seed ^ 0xf0115);

    let x = rand_tensor(&[1, 16, 60, 16], &mut r);

    let mut pcem = Pcem::new(16, config.kappa, &mut build);
    randomize(&mut pcem, seed + 11);
    let got = graph_forward(&x, |s, xid| pcem.forward(s, "p", xid));
    cases.push(FidelityCase {
        name: "positional-context enhancement, production geometry",
        err: max_rel_err(&got, &pcem_naive(&pcem, &x)),
    });

    let mut mgaa = Mgaa::new(16, config.kappa, config.granularity.0, &mut build);
    randomize(&mut mgaa, seed + 12);
    let got = graph_forward(&x, |s, xid| mgaa.forward(s, "m", xid));
    cases.push(FidelityCase {
        name: "band attention, production geometry",
        err: max_rel_err(&got, &mgaa_naive(&mgaa, &x)),
    });

    let mut fcem = Fcem::new(16, 60, &config, &mut build);
    randomize(&mut fcem, seed + 13);
    let got = graph_forward(&x, |s, xid| fcem.forward(s, "f", xid));
    cases.push(FidelityCase {
        name: "frequency-context enhancement, production geometry",
        err: max_rel_err(&got, &fcem_naive(&fcem, &x)),
    });

    cases
}
