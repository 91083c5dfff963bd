//! Clip manifests: CSV listings binding clip ids to audio files with their
//! duration, label, and transmission condition.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::degrade::Condition;
use crate::features::{Duration, Label};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub duration: Duration,
    pub label: Label,
    pub condition: Condition,
}

impl ManifestEntry {
    /// Relative manifest paths are resolved against the manifest's directory.
    pub fn resolved_path(&self, base: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            base.join(&self.path)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

const HEADER: [&str; 5] = ["id", "path", "duration", "label", "condition"];

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.id.is_empty() {
                return Err(Error::data("manifest entry with empty id"));
            }
            if e.path.as_os_str().is_empty() {
                return Err(Error::data(format!("manifest entry {:?} has no path", e.id)));
            }
            if !seen.insert(&e.id) {
                return Err(Error::data(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(e.to_string()))?;
        w.write_record(HEADER).map_err(|e| Error::data(e.to_string()))?;
        for e in &self.entries {
            w.write_record([
                e.id.as_str(),
                &e.path.display().to_string(),
                &e.duration.to_string(),
                &e.label.to_string(),
                &e.condition.to_string(),
            ])
            .map_err(|e| Error::data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path.to_path_buf(), e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let headers = r.headers().map_err(|e| Error::data(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::data(format!(
                "{}: expected header id,path,duration,label,condition, got {headers:?}",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::data(e.to_string()))?;
            if rec.len() != HEADER.len() {
                return Err(Error::data(format!(
                    "{}: manifest row has {} fields",
                    path.display(),
                    rec.len()
                )));
            }
            entries.push(ManifestEntry {
                id: rec[0].to_string(),
                path: PathBuf::from(&rec[1]),
                duration: Duration::from_secs(
                    rec[2]
                        .parse()
                        .map_err(|_| Error::data(format!("bad duration {:?}", &rec[2])))?,
                )?,
                label: rec[3].parse()?,
                condition: rec[4].parse()?,
            });
        }
        let m = Manifest { entries };
        m.validate()?;
        Ok(m)
    }
}
