//! Flag resolution and batch plumbing shared by the subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use smgaa_core::config::RunConfig;
use smgaa_core::degrade::Condition;
use smgaa_core::features::{Duration, FeatureKind};
use smgaa_core::{Error, Result};

use crate::Cli;

/// Resolve the run configuration: file overlay, then the --feature override.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut rc = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = &cli.feature {
        rc.feature = kind.parse::<FeatureKind>()?;
    }
    Ok(rc)
}

/// The output directory, created on demand.
pub fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| Error::config("this command writes files; pass --out DIR"))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Log the fully resolved configuration next to the outputs.
pub fn write_resolved(rc: &RunConfig, dir: &Path) -> Result<()> {
    rc.write_resolved(dir.join("config.resolved.txt"))
}

/// `--duration` as a list: a single value or `all`.
pub fn durations(cli: &Cli) -> Result<Vec<Duration>> {
    if cli.duration == "all" {
        return Ok(Duration::ALL.to_vec());
    }
    let secs: f64 = cli
        .duration
        .parse()
        .map_err(|_| Error::config(format!("bad --duration {:?}", cli.duration)))?;
    Ok(vec![Duration::from_secs(secs)?])
}

/// `--condition` as a list: a single value or `all`.
pub fn conditions(cli: &Cli) -> Result<Vec<Condition>> {
    if cli.condition == "all" {
        return Ok((0..6).map(|i| Condition::from_index(i).unwrap()).collect());
    }
    Ok(vec![cli.condition.parse()?])
}

/// Worker pool sized by --workers (default: all cores).
pub fn pool(cli: &Cli) -> Result<rayon::ThreadPool> {
    let workers = match cli.workers {
        Some(0) => return Err(Error::config("--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map(usize::from).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))
}

/// Apply `f` to every item on the pool, preserving input order.
pub fn parallel_map<T, R, F>(pool: &rayon::ThreadPool, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Split batch results into successes and logged failures; the caller decides
/// what "success" carries.
pub fn sift<R>(labeled: Vec<(String, Result<R>)>) -> (Vec<R>, usize) {
    let mut ok = Vec::new();
    let mut failures = 0;
    for (id, outcome) in labeled {
        match outcome {
            Ok(r) => ok.push(r),
            Err(e) => {
                failures += 1;
                log::error!("{id}: {e}");
            }
        }
    }
    (ok, failures)
}
