//! Metrics and evaluation: equal error rate with interpolated crossing,
//! real-time factor measurement, scoring, and the results grid.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::{Duration, FeatureMap, Label};
use crate::degrade::Condition;
use crate::model::{count_flops, count_params, Mode, Network, Session};
use crate::tensor::Tensor;
use crate::{Error, Result};

// ── equal error rate ────────────────────────────────────────────────────

/// Equal error rate of spoof-positive scores: FAR(t) is the fraction of bona
/// fide clips scoring strictly above t, FRR(t) the fraction of spoof clips
/// strictly below. Both are stepped over a below-minimum sentinel plus every
/// observed score; the crossing of FAR − FRR is interpolated linearly.
/// Returns (eer, threshold).
pub fn compute_eer(scores: &[(f64, Label)]) -> Result<(f64, f64)> {
    let mut bona: Vec<f64> = Vec::new();
    let mut spoof: Vec<f64> = Vec::new();
    for &(s, l) in scores {
        if !s.is_finite() {
            return Err(Error::data(format!("non-finite score {s}")));
        }
        match l {
            Label::BonaFide => bona.push(s),
            Label::Spoof => spoof.push(s),
        }
    }
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::data("equal error rate needs both classes"));
    }
    bona.sort_by(|a, b| a.partial_cmp(b).unwrap());
    spoof.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = bona.iter().chain(spoof.iter()).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    thresholds.insert(0, thresholds[0] - 1.0);

    let nb = bona.len() as f64;
    let ns = spoof.len() as f64;
    // strict inequalities, via binary search over the sorted class scores
    let far = |t: f64| (bona.len() - bona.partition_point(|&v| v <= t)) as f64 / nb;
    let frr = |t: f64| spoof.partition_point(|&v| v < t) as f64 / ns;

    let mut prev_t = thresholds[0];
    let mut prev_far = far(prev_t);
    let mut prev_d = prev_far - frr(prev_t);
    if prev_d == 0.0 {
        return Ok((prev_far, prev_t));
    }
    for &t in &thresholds[1..] {
        let cur_far = far(t);
        let cur_d = cur_far - frr(t);
        if cur_d == 0.0 {
            return Ok((cur_far, t));
        }
        if (prev_d > 0.0) != (cur_d > 0.0) {
            let alpha = prev_d / (prev_d - cur_d);
            let eer = prev_far + alpha * (cur_far - prev_far);
            let threshold = prev_t + alpha * (t - prev_t);
            return Ok((eer, threshold));
        }
        prev_t = t;
        prev_far = cur_far;
        prev_d = cur_d;
    }
    // FAR ends at 0 and FRR at 1 above the top score, so the difference must
    // cross; reaching here means the inputs violated that invariant
    Err(Error::data("error-rate curves never crossed"))
}

// ── scoring ─────────────────────────────────────────────────────────────

/// Stack per-clip feature maps [1, 1, F, T] into one batch [B, 1, F, T].
pub fn batch_tensor(maps: &[&FeatureMap]) -> Result<Tensor> {
    if maps.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let shape = maps[0].tensor.shape().to_vec();
    let mut data = Vec::with_capacity(maps.len() * maps[0].tensor.numel());
    for m in maps {
        if m.tensor.shape() != shape.as_slice() {
            return Err(Error::data(format!(
                "feature map shape {:?} does not match batch shape {:?}",
                m.tensor.shape(),
                shape
            )));
        }
        data.extend_from_slice(m.tensor.data());
    }
    Tensor::from_vec(&[maps.len(), shape[1], shape[2], shape[3]], data)
}

/// Spoof log-likelihood scores (log-softmax of the spoof logit), batched
/// eval-mode forward passes. Higher means more likely spoofed.
pub fn score_clips(net: &Network, maps: &[&FeatureMap], batch_size: usize) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut out = Vec::with_capacity(maps.len());
    for chunk in maps.chunks(batch_size) {
        let x = batch_tensor(chunk)?;
        let mut s = Session::new(Mode::Eval);
        let xid = s.graph.leaf_owned(x);
        let logits = net.forward(&mut s, xid)?;
        let data = s.graph.data(logits);
        for row in data.chunks(2) {
            let m = row[0].max(row[1]);
            let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
            out.push(row[1] - lse);
        }
    }
    Ok(out)
}

// ── real-time factor ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct RtfReport {
    pub duration: Duration,
    pub median_seconds: f64,
    /// Inference seconds per second of audio.
    pub rtf: f64,
}

/// Median single-utterance inference time over `n_trials` eval-mode forward
/// passes (after `warmup` discarded passes), divided by the clip length.
pub fn measure_rtf(net: &Network, warmup: usize, n_trials: usize) -> Result<RtfReport> {
    if n_trials == 0 {
        return Err(Error::config("real-time factor needs at least one trial"));
    }
    let duration = net.duration;
    let f = net.config.input_f;
    let t = duration.frames();
    let mut rng = ChaCha8Rng::seed_from_u64(0x52_54_46);
    let n = f * t;
    let data: Vec<f64> = (0..n).map(|_| rand::RngExt::random_range(&mut rng, -1.0..1.0)).collect();
    let x = Tensor::from_vec(&[1, 1, f, t], data)?;

    let run = |x: &Tensor| -> Result<f64> {
        let mut s = Session::new(Mode::Eval);
        let xid = s.graph.leaf(x);
        let start = Instant::now();
        let logits = net.forward(&mut s, xid)?;
        let _ = s.graph.data(logits);
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..warmup {
        run(&x)?;
    }
    let mut times = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        times.push(run(&x)?);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    Ok(RtfReport { duration, median_seconds: median, rtf: median / duration.secs() })
}

// ── results grid ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub duration: Duration,
    /// Equal error rate per condition C0..C5; None where not evaluated.
    pub eer: [Option<f64>; 6],
    pub params: usize,
    pub gflops: f64,
    pub rtf: Option<f64>,
}

impl ReportRow {
    /// Mean over all six conditions; present only when every cell is.
    pub fn avg(&self) -> Option<f64> {
        if self.eer.iter().all(Option::is_some) {
            Some(self.eer.iter().map(|v| v.unwrap()).sum::<f64>() / 6.0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row_for(&self, duration: Duration) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.duration == duration)
    }
}

/// Fill a row's complexity columns from the model itself.
pub fn complexity_row(net: &Network) -> ReportRow {
    ReportRow {
        duration: net.duration,
        eer: [None; 6],
        params: count_params(net),
        gflops: count_flops(&net.config, net.duration) as f64 / 1e9,
        rtf: None,
    }
}

const REPORT_HEADER: [&str; 11] =
    ["duration", "c0", "c1", "c2", "c3", "c4", "c5", "avg", "params", "gflops", "rtf"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_report_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(e.to_string()))?;
    w.write_record(REPORT_HEADER).map_err(|e| Error::data(e.to_string()))?;
    for row in &report.rows {
        let mut rec = vec![row.duration.to_string()];
        for c in row.eer {
            rec.push(fmt_opt(c));
        }
        rec.push(fmt_opt(row.avg()));
        rec.push(row.params.to_string());
        rec.push(format!("{:.6}", row.gflops));
        rec.push(fmt_opt(row.rtf));
        w.write_record(&rec).map_err(|e| Error::data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.to_path_buf(), e))
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(e.to_string()))?;
    let headers = r.headers().map_err(|e| Error::data(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != REPORT_HEADER {
        return Err(Error::data(format!("unexpected report header {headers:?}")));
    }
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::data(format!("bad report number {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::data(e.to_string()))?;
        if rec.len() != REPORT_HEADER.len() {
            return Err(Error::data(format!("report row has {} fields", rec.len())));
        }
        let duration = Duration::from_secs(
            rec[0].parse().map_err(|_| Error::data(format!("bad duration {:?}", &rec[0])))?,
        )?;
        let mut eer = [None; 6];
        for (i, slot) in eer.iter_mut().enumerate() {
            *slot = parse_opt(&rec[1 + i])?;
        }
        rows.push(ReportRow {
            duration,
            eer,
            params: rec[8].parse().map_err(|_| Error::data("bad parameter count"))?,
            gflops: rec[9].parse().map_err(|_| Error::data("bad gflops"))?,
            rtf: parse_opt(&rec[10])?,
        });
    }
    Ok(EvalReport { rows })
}

// ── per-clip scores ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub clip_id: String,
    pub duration: Duration,
    pub condition: Condition,
    pub label: Label,
    pub score: f64,
}

pub fn write_scores_csv(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(e.to_string()))?;
    w.write_record(["clip_id", "duration", "condition", "label", "score"])
        .map_err(|e| Error::data(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.clip_id.as_str(),
            &r.duration.to_string(),
            &r.condition.to_string(),
            &r.label.to_string(),
            &format!("{:.12}", r.score),
        ])
        .map_err(|e| Error::data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.to_path_buf(), e))
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::data(e.to_string()))?;
        if rec.len() != 5 {
            return Err(Error::data(format!("score row has {} fields", rec.len())));
        }
        rows.push(ScoreRow {
            clip_id: rec[0].to_string(),
            duration: Duration::from_secs(
                rec[1].parse().map_err(|_| Error::data(format!("bad duration {:?}", &rec[1])))?,
            )?,
            condition: rec[2].parse()?,
            label: rec[3].parse()?,
            score: rec[4].parse().map_err(|_| Error::data(format!("bad score {:?}", &rec[4])))?,
        });
    }
    Ok(rows)
}
