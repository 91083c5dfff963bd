//! The six pipeline subcommands.

use std::path::{Path, PathBuf};

use smgaa_core::degrade::{codec_for_clip, condition_pipeline, Condition, DegradationSpec};
use smgaa_core::eval::{
    complexity_row, compute_eer, measure_rtf, score_clips, write_report_csv, write_scores_csv,
    EvalReport, ScoreRow,
};
use smgaa_core::features::{
    featurize as featurize_clip, read_wav, write_wav, AudioClip, Duration, FeatureMap, Label,
};
use smgaa_core::manifest::{Manifest, ManifestEntry};
use smgaa_core::model::{count_flops, count_params, load_checkpoint, save_checkpoint, Network};
use smgaa_core::synth::{make_corpus, oracle_eer, SynthSpec};
use smgaa_core::tensor::Tensor;
use smgaa_core::train::{fit, TrainItem};
use smgaa_core::{Error, Result};

use crate::util::{
    conditions, durations, out_dir, parallel_map, pool, resolve_config, sift, write_resolved,
};
use crate::Cli;

pub enum Outcome {
    Clean,
    PartialFailures(usize),
}

fn outcome(failures: usize) -> Outcome {
    if failures == 0 {
        Outcome::Clean
    } else {
        Outcome::PartialFailures(failures)
    }
}

/// Manifest directory, for resolving its relative paths.
fn manifest_base(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
}

fn load_audio(entry: &ManifestEntry, base: &Path) -> Result<AudioClip> {
    let samples = read_wav(entry.resolved_path(base))?;
    AudioClip::new(samples, entry.duration, entry.label, entry.condition)
}

// ── synth ───────────────────────────────────────────────────────────────

pub fn synth(cli: &Cli, n_per_class: usize) -> Result<Outcome> {
    let rc = resolve_config(cli)?;
    let dir = out_dir(cli)?;
    let spec = SynthSpec { n_per_class, durations: durations(cli)?, seed: cli.seed };
    let corpus = make_corpus(&spec)?;

    // the corpus contract: a hand-written band-energy oracle separates the
    // classes perfectly, so downstream learning failures implicate the model
    let eer = oracle_eer(&corpus)?;
    if eer != 0.0 {
        return Err(Error::data(format!(
            "synthetic corpus is not oracle-separable (oracle EER {eer})"
        )));
    }

    let clips_dir = dir.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    let workers = pool(cli)?;
    let written = parallel_map(&workers, &corpus, |c| {
        let rel = PathBuf::from("clips").join(format!("{}.wav", c.id));
        let entry = write_wav(dir.join(&rel), &c.clip.samples).map(|()| ManifestEntry {
            id: c.id.clone(),
            path: rel,
            duration: c.clip.duration,
            label: c.clip.label,
            condition: c.clip.condition,
        });
        (c.id.clone(), entry)
    });
    let (entries, failures) = sift(written);
    let n = entries.len();
    Manifest { entries }.write_csv(dir.join("manifest.csv"))?;
    write_resolved(&rc, &dir)?;
    log::info!("synth: {n} clips, oracle EER 0, manifest.csv written to {}", dir.display());
    Ok(outcome(failures))
}

// ── featurize ───────────────────────────────────────────────────────────

pub fn featurize(cli: &Cli, manifest_path: &Path) -> Result<Outcome> {
    let rc = resolve_config(cli)?;
    let dir = out_dir(cli)?;
    let manifest = Manifest::read_csv(manifest_path)?;
    let base = manifest_base(manifest_path);
    let wanted = durations(cli)?;
    let selected: Vec<&ManifestEntry> =
        manifest.entries.iter().filter(|e| wanted.contains(&e.duration)).collect();

    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let workers = pool(cli)?;
    let written = parallel_map(&workers, &selected, |e| {
        let run = || -> Result<ManifestEntry> {
            let clip = load_audio(e, &base)?;
            let fm = featurize_clip(&clip, rc.feature)?;
            let rel = PathBuf::from("features").join(format!("{}.smgt", e.id));
            fm.tensor.save(dir.join(&rel))?;
            Ok(ManifestEntry { path: rel, ..(*e).clone() })
        };
        (e.id.clone(), run())
    });
    let (entries, failures) = sift(written);
    let n = entries.len();
    Manifest { entries }.write_csv(dir.join("manifest.csv"))?;
    write_resolved(&rc, &dir)?;
    log::info!("featurize: {n} {} maps written to {}", rc.feature, dir.display());
    Ok(outcome(failures))
}

// ── degrade ─────────────────────────────────────────────────────────────

pub fn degrade(cli: &Cli, manifest_path: &Path) -> Result<Outcome> {
    let rc = resolve_config(cli)?;
    let dir = out_dir(cli)?;
    let manifest = Manifest::read_csv(manifest_path)?;
    let base = manifest_base(manifest_path);
    let conds = conditions(cli)?;
    let wanted = durations(cli)?;

    for cond in &conds {
        let sub = dir.join(cond.to_string());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let jobs: Vec<(&ManifestEntry, Condition)> = manifest
        .entries
        .iter()
        .filter(|e| wanted.contains(&e.duration))
        .flat_map(|e| conds.iter().map(move |&c| (e, c)))
        .collect();

    let seed = cli.seed;
    let workers = pool(cli)?;
    let written = parallel_map(&workers, &jobs, |&(e, cond)| {
        let run = || -> Result<ManifestEntry> {
            let clip = load_audio(e, &base)?;
            let degraded = if cond == Condition::C0 {
                clip
            } else {
                let codec = codec_for_clip(&e.id, seed);
                let spec = DegradationSpec::standard(cond, codec, seed)?;
                condition_pipeline(&clip, &spec)?
            };
            let rel = PathBuf::from(cond.to_string()).join(format!("{}.wav", e.id));
            write_wav(dir.join(&rel), &degraded.samples)?;
            Ok(ManifestEntry {
                id: format!("{}_{cond}", e.id),
                path: rel,
                duration: e.duration,
                label: e.label,
                condition: cond,
            })
        };
        (format!("{}_{cond}", e.id), run())
    });
    let (entries, failures) = sift(written);
    let n = entries.len();
    Manifest { entries }.write_csv(dir.join("manifest.csv"))?;
    write_resolved(&rc, &dir)?;
    log::info!(
        "degrade: {n} clips across {} condition(s) written to {}",
        conds.len(),
        dir.display()
    );
    Ok(outcome(failures))
}

// ── train ───────────────────────────────────────────────────────────────

/// Load one feature tensor and check its geometry against the model contract.
fn load_feature(
    entry: &ManifestEntry,
    base: &Path,
    input_f: usize,
    kind: smgaa_core::features::FeatureKind,
) -> Result<FeatureMap> {
    let tensor = Tensor::load(entry.resolved_path(base))?;
    let expect = [1, 1, input_f, entry.duration.frames()];
    if tensor.shape() != expect {
        return Err(Error::data(format!(
            "{}: feature tensor is {:?}, a {}s clip needs {:?}",
            entry.id,
            tensor.shape(),
            entry.duration,
            expect
        )));
    }
    Ok(FeatureMap { tensor, kind, duration: entry.duration })
}

pub fn train(cli: &Cli, manifest_path: &Path) -> Result<Outcome> {
    let rc = resolve_config(cli)?;
    let dir = out_dir(cli)?;
    let manifest = Manifest::read_csv(manifest_path)?;
    let base = manifest_base(manifest_path);

    let selected = if cli.duration == "all" {
        // train whatever the manifest provides, in canonical order
        Duration::ALL
            .into_iter()
            .filter(|d| manifest.entries.iter().any(|e| e.duration == *d))
            .collect::<Vec<_>>()
    } else {
        durations(cli)?
    };
    if selected.is_empty() {
        return Err(Error::data("manifest has no clips for any duration"));
    }

    for &duration in &selected {
        let rows: Vec<&ManifestEntry> =
            manifest.entries.iter().filter(|e| e.duration == duration).collect();
        if rows.is_empty() {
            return Err(Error::data(format!("manifest has no {duration}s clips")));
        }
        let items = rows
            .iter()
            .map(|e| {
                Ok(TrainItem {
                    features: load_feature(e, &base, rc.model.input_f, rc.feature)?,
                    label: e.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut net = Network::new(&rc.model, duration, cli.seed)?;
        let mut tc = rc.train.clone();
        tc.seed = cli.seed;
        let report = fit(&mut net, &items, &tc)?;

        let ckpt = dir.join(format!("model_{duration}s.ckpt"));
        save_checkpoint(
            &ckpt,
            &net,
            &[
                ("best_val_eer".into(), format!("{:.6}", report.best_val_eer)),
                ("epochs_run".into(), report.epochs_run.to_string()),
                ("seed".into(), cli.seed.to_string()),
            ],
        )?;
        smgaa_core::train::write_train_log(
            dir.join(format!("train_log_{duration}s.csv")),
            &report.logs,
        )?;
        log::info!(
            "train: {duration}s model on {} clips, best val EER {:.4} at epoch {}, saved {}",
            items.len(),
            report.best_val_eer,
            report.best_epoch,
            ckpt.display()
        );
    }
    write_resolved(&rc, &dir)?;
    Ok(Outcome::Clean)
}

// ── eval ────────────────────────────────────────────────────────────────

pub fn eval(
    cli: &Cli,
    checkpoints: &[PathBuf],
    manifest_path: &Path,
    rtf_trials: usize,
) -> Result<Outcome> {
    let rc = resolve_config(cli)?;
    let dir = out_dir(cli)?;
    let manifest = Manifest::read_csv(manifest_path)?;
    let base = manifest_base(manifest_path);
    let conds = conditions(cli)?;

    let mut report = EvalReport::default();
    let mut scores = Vec::new();
    for ckpt in checkpoints {
        let (net, _extras) = load_checkpoint(ckpt)?;
        let duration = net.duration;
        let mut row = complexity_row(&net);

        let mut any = false;
        for &cond in &conds {
            let rows: Vec<&ManifestEntry> = manifest
                .entries
                .iter()
                .filter(|e| e.duration == duration && e.condition == cond)
                .collect();
            if rows.is_empty() {
                continue;
            }
            any = true;
            let maps = rows
                .iter()
                .map(|e| load_feature(e, &base, net.config.input_f, rc.feature))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FeatureMap> = maps.iter().collect();
            let clip_scores = score_clips(&net, &refs, rc.train.batch_size)?;
            let labeled: Vec<(f64, Label)> =
                clip_scores.iter().zip(&rows).map(|(&s, e)| (s, e.label)).collect();
            let (eer, _threshold) = compute_eer(&labeled)?;
            row.eer[cond.index()] = Some(eer);
            log::info!("eval: {duration}s {cond} EER {:.4} over {} clips", eer, rows.len());
            scores.extend(rows.iter().zip(&clip_scores).map(|(e, &score)| ScoreRow {
                clip_id: e.id.clone(),
                duration,
                condition: cond,
                label: e.label,
                score,
            }));
        }
        if !any {
            return Err(Error::data(format!(
                "manifest has no rows for the {duration}s checkpoint {}",
                ckpt.display()
            )));
        }
        if rtf_trials > 0 {
            row.rtf = Some(measure_rtf(&net, 1, rtf_trials)?.rtf);
        }
        report.rows.push(row);
    }

    write_scores_csv(dir.join("scores.csv"), &scores)?;
    write_report_csv(dir.join("report.csv"), &report)?;
    write_resolved(&rc, &dir)?;
    log::info!(
        "eval: {} score rows, report.csv written to {}",
        scores.len(),
        dir.display()
    );
    Ok(Outcome::Clean)
}

// ── inspect ─────────────────────────────────────────────────────────────

pub fn inspect(cli: &Cli) -> Result<Outcome> {
    let rc = resolve_config(cli)?;
    println!("variant: {:?}", rc.model.variant);
    println!("{:>9} {:>7} {:>10} {:>10}", "duration", "frames", "params", "MFLOP");
    for duration in Duration::ALL {
        let net = Network::new(&rc.model, duration, 0)?;
        println!(
            "{:>8}s {:>7} {:>10} {:>10.1}",
            duration.to_string(),
            duration.frames(),
            count_params(&net),
            count_flops(&rc.model, duration) as f64 / 1e6
        );
    }
    Ok(Outcome::Clean)
}
