//! Training loop: decoupled-weight-decay Adam, cosine learning-rate
//! schedule, gradient clipping by global norm, seeded splits, and early
//! stopping on validation equal error rate.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{batch_tensor, compute_eer, score_clips};
use crate::features::{FeatureMap, Label};
use crate::model::{Mode, Network, ParamKind, Session, Visitable, BN_MOMENTUM};
use crate::{mix64, Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving validation epochs tolerated before stopping.
    pub patience: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clip.
    pub grad_clip: f64,
    /// Fraction of clips in the training split.
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 5,
            patience: 3,
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            grad_clip: 5.0,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if !(self.lr_min >= 0.0 && self.lr_max >= self.lr_min) {
            return Err(Error::config(format!(
                "learning-rate range [{}, {}] is invalid",
                self.lr_min, self.lr_max
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight decay must be finite and non-negative"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("gradient clip must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config(format!("split ratio {} outside (0, 1)", self.split_ratio)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.max_epochs".into(), self.max_epochs.to_string()),
            ("train.patience".into(), self.patience.to_string()),
            ("train.lr_max".into(), self.lr_max.to_string()),
            ("train.lr_min".into(), self.lr_min.to_string()),
            ("train.weight_decay".into(), self.weight_decay.to_string()),
            ("train.grad_clip".into(), self.grad_clip.to_string()),
            ("train.split_ratio".into(), self.split_ratio.to_string()),
        ]
    }
}

/// Cosine annealing from lr_max at step 0 to lr_min at `total` steps.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let s = (step.min(total)) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * s).cos())
}

// ── optimizer ───────────────────────────────────────────────────────────

/// Adam with decoupled weight decay; decay applies uniformly to every
/// trainable tensor. First and second moments are kept per parameter path.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, moments: BTreeMap::new() }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of a single parameter tensor, in place.
    pub fn apply(&mut self, path: &str, w: &mut [f64], g: &[f64], lr: f64) {
        assert!(self.step >= 1, "begin_step before apply");
        let (m, v) = self
            .moments
            .entry(path.to_string())
            .or_insert_with(|| (vec![0.0; w.len()], vec![0.0; w.len()]));
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..w.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w[i]);
        }
    }
}

// ── early stopping ──────────────────────────────────────────────────────

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::INFINITY, bad: 0 }
    }

    /// Feed one validation value; returns true when it improved on the best.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.bad = 0;
            true
        } else {
            self.bad += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

// ── data plumbing ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub features: FeatureMap,
    pub label: Label,
}

/// Seeded shuffle split into (train, val) index lists.
pub fn train_val_split(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, 0x5911));
    idx.shuffle(&mut rng);
    let cut = ((n as f64) * ratio).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::config(format!(
            "split of {n} clips at ratio {ratio} leaves an empty side"
        )));
    }
    let val = idx.split_off(cut);
    Ok((idx, val))
}

// ── fit ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    /// Global optimizer step count at epoch end.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean training loss per clip.
    pub train_loss: f64,
    pub val_eer: f64,
    /// Seconds since fit began.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub logs: Vec<EpochLog>,
    pub best_val_eer: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

fn val_eer(net: &Network, items: &[TrainItem], idx: &[usize], batch: usize) -> Result<f64> {
    let maps: Vec<&FeatureMap> = idx.iter().map(|&i| &items[i].features).collect();
    let scores = score_clips(net, &maps, batch)?;
    let labeled: Vec<(f64, Label)> =
        scores.iter().zip(idx).map(|(&s, &i)| (s, items[i].label)).collect();
    Ok(compute_eer(&labeled)?.0)
}

/// Train in place; on return the network holds the best-validation weights.
pub fn fit(net: &mut Network, items: &[TrainItem], tc: &TrainConfig) -> Result<FitReport> {
    tc.validate()?;
    for item in items {
        if item.features.duration != net.duration {
            return Err(Error::config(format!(
                "clip duration {} does not match the {}s model",
                item.features.duration, net.duration
            )));
        }
    }
    let (train_idx, val_idx) = train_val_split(items.len(), tc.split_ratio, tc.seed)?;
    for (name, idx) in [("training", &train_idx), ("validation", &val_idx)] {
        let bona = idx.iter().filter(|&&i| items[i].label == Label::BonaFide).count();
        if bona == 0 || bona == idx.len() {
            return Err(Error::config(format!(
                "{name} split holds {bona} bona fide of {} clips; both classes are required",
                idx.len()
            )));
        }
    }

    let start = Instant::now();
    let steps_per_epoch = train_idx.len().div_ceil(tc.batch_size);
    let total_steps = tc.max_epochs * steps_per_epoch;
    let mut opt = AdamW::new(tc.weight_decay);
    let mut stopper = EarlyStopper::new(tc.patience);
    let mut logs = Vec::new();
    let mut best = net.clone();
    let mut best_epoch = 0;
    let mut stopped_early = false;
    let mut global_step = 0usize;

    if tc.max_epochs == 0 {
        let eer = val_eer(net, items, &val_idx, tc.batch_size)?;
        return Ok(FitReport {
            logs,
            best_val_eer: eer,
            best_epoch: 0,
            epochs_run: 0,
            stopped_early: false,
        });
    }

    for epoch in 1..=tc.max_epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(tc.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut lr_last = tc.lr_max;
        for chunk in order.chunks(tc.batch_size) {
            let maps: Vec<&FeatureMap> = chunk.iter().map(|&i| &items[i].features).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| items[i].label.class()).collect();
            let x = batch_tensor(&maps)?;

            let mut s = Session::new(Mode::Train);
            let xid = s.graph.leaf_owned(x);
            let logits = net.forward(&mut s, xid)?;
            let loss = s.graph.cross_entropy(logits, &labels)?;
            s.graph.backward(loss)?;
            loss_sum += s.graph.data(loss)[0] * chunk.len() as f64;

            // gradients keyed by path, clipped by global norm
            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut sq_norm = 0.0;
            for (path, node) in s.param_nodes() {
                let g = s
                    .graph
                    .grad(node)
                    .ok_or_else(|| Error::data(format!("no gradient reached {path:?}")))?;
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::data(format!(
                        "non-finite gradient in {path:?} at step {global_step}"
                    )));
                }
                sq_norm += g.iter().map(|v| v * v).sum::<f64>();
                grads.insert(path.to_string(), g.to_vec());
            }
            let norm = sq_norm.sqrt();
            if norm > tc.grad_clip {
                let scale = tc.grad_clip / norm;
                for g in grads.values_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }

            // batch statistics folded into running estimates
            let mut bn_updates: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
            for (path, node) in s.bn_nodes() {
                let (mean, var) = s
                    .graph
                    .bn_batch_stats(*node)
                    .ok_or_else(|| Error::data(format!("no batch statistics at {path:?}")))?;
                let shape = s.graph.shape(*node);
                let n = shape[0] * shape[2] * shape[3];
                bn_updates.insert(path.clone(), (mean.to_vec(), var.to_vec(), n));
            }

            let lr = cosine_lr(global_step, total_steps, tc.lr_max, tc.lr_min);
            lr_last = lr;
            opt.begin_step();
            let mut apply_err: Option<Error> = None;
            net.visit_mut("", &mut |path, t, kind| match kind {
                ParamKind::Param => {
                    if let Some(g) = grads.remove(path) {
                        opt.apply(path, t.data_mut(), &g, lr);
                    } else if apply_err.is_none() {
                        apply_err =
                            Some(Error::data(format!("parameter {path:?} was never bound")));
                    }
                }
                ParamKind::Buffer => {
                    let (suffix_mean, prefix) = match path.rfind('.') {
                        Some(pos) => (&path[pos + 1..] == "running_mean", &path[..pos]),
                        None => (false, path),
                    };
                    if let Some((mean, var, n)) = bn_updates.get(prefix) {
                        let unbias = *n as f64 / (*n as f64 - 1.0);
                        let src = if suffix_mean { mean } else { var };
                        for (slot, &v) in t.data_mut().iter_mut().zip(src) {
                            let v = if suffix_mean { v } else { v * unbias };
                            *slot = (1.0 - BN_MOMENTUM) * *slot + BN_MOMENTUM * v;
                        }
                    }
                }
            });
            if let Some(e) = apply_err {
                return Err(e);
            }
            if let Some(path) = grads.keys().next() {
                return Err(Error::data(format!("gradient for unknown parameter {path:?}")));
            }
            global_step += 1;
        }

        let eer = val_eer(net, items, &val_idx, tc.batch_size)?;
        let improved = stopper.observe(eer);
        if improved {
            best = net.clone();
            best_epoch = epoch;
        }
        let log_row = EpochLog {
            epoch,
            step: global_step,
            lr: lr_last,
            train_loss: loss_sum / train_idx.len() as f64,
            val_eer: eer,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}: step {} lr {:.3e} loss {:.4} val_eer {:.4} ({:.1}s)",
            log_row.epoch,
            log_row.step,
            log_row.lr,
            log_row.train_loss,
            log_row.val_eer,
            log_row.wall_seconds
        );
        logs.push(log_row);
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }

    let epochs_run = logs.len();
    *net = best;
    Ok(FitReport {
        logs,
        best_val_eer: stopper.best(),
        best_epoch,
        epochs_run,
        stopped_early,
    })
}

/// Training log as CSV, one row per epoch.
pub fn write_train_log(path: impl AsRef<Path>, logs: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(e.to_string()))?;
    w.write_record(["epoch", "step", "lr", "train_loss", "val_eer", "wall_seconds"])
        .map_err(|e| Error::data(e.to_string()))?;
    for l in logs {
        w.write_record([
            l.epoch.to_string(),
            l.step.to_string(),
            format!("{:.9}", l.lr),
            format!("{:.9}", l.train_loss),
            format!("{:.9}", l.val_eer),
            format!("{:.3}", l.wall_seconds),
        ])
        .map_err(|e| Error::data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.to_path_buf(), e))
}
