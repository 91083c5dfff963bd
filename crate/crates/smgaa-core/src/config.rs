//! Run configuration: flat `key = value` files over defaults, with unknown
//! keys rejected and the resolved configuration writable next to outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::features::FeatureKind;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub feature: FeatureKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            feature: FeatureKind::Mfcc,
        }
    }
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = self.model.to_kv();
        kv.extend(self.train.to_kv());
        kv.push(("feature".into(), self.feature.to_string()));
        kv
    }

    /// Defaults overlaid with the given pairs; keys outside the known set
    /// are an error rather than silently ignored.
    pub fn from_kv_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<String, String> = RunConfig::default().to_kv().into_iter().collect();
        for (k, v) in pairs {
            if !map.contains_key(k) {
                return Err(Error::config(format!("unknown configuration key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }
        let model = ModelConfig::from_kv(&map)?;
        let parse_usize = |key: &str| -> Result<usize> {
            map[key].parse().map_err(|_| Error::config(format!("bad value for {key}: {:?}", map[key])))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            map[key].parse().map_err(|_| Error::config(format!("bad value for {key}: {:?}", map[key])))
        };
        let train = TrainConfig {
            batch_size: parse_usize("train.batch_size")?,
            max_epochs: parse_usize("train.max_epochs")?,
            patience: parse_usize("train.patience")?,
            lr_max: parse_f64("train.lr_max")?,
            lr_min: parse_f64("train.lr_min")?,
            weight_decay: parse_f64("train.weight_decay")?,
            grad_clip: parse_f64("train.grad_clip")?,
            split_ratio: parse_f64("train.split_ratio")?,
            seed: 0,
        };
        train.validate()?;
        let feature: FeatureKind = map["feature"].parse()?;
        Ok(RunConfig { model, train, feature })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let pairs = parse_kv_text(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        RunConfig::from_kv_pairs(&pairs)
    }

    /// Write the fully resolved configuration as `key = value` lines.
    pub fn write_resolved(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for (k, v) in self.to_kv() {
            text.push_str(&format!("{k} = {v}\n"));
        }
        fs::write(path, text).map_err(|e| Error::io(path.to_path_buf(), e))
    }
}
