//! Checkpoint container: model configuration as key=value text plus every
//! parameter and buffer tensor, in one deterministic binary file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::features::Duration;
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::layers::{ParamKind, Visitable};
use super::net::Network;
use super::ModelConfig;

const MAGIC: &[u8; 4] = b"SMGC";
const VERSION: u16 = 1;

fn w_u16(w: &mut impl Write, v: u16) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn r_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn r_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_str(r: &mut impl Read) -> Result<String> {
    let n = r_u32(r).map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
    if n > 1 << 20 {
        return Err(Error::data(format!("checkpoint string length {n} is implausible")));
    }
    let mut buf = vec![0; n as usize];
    r.read_exact(&mut buf).map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::data("checkpoint string is not UTF-8"))
}

fn kind_code(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Param => 0,
        ParamKind::Buffer => 1,
    }
}

/// Write the model, its configuration, and any extra key=value metadata.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &Network,
    extras: &[(String, String)],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut w = BufWriter::new(file);

    let mut kv = net.config.to_kv();
    kv.push(("duration".into(), net.duration.to_string()));
    kv.extend(extras.iter().cloned());

    let mut entries: Vec<(String, Tensor, ParamKind)> = Vec::new();
    net.visit("", &mut |p, t, kind| entries.push((p.to_string(), t.clone(), kind)));

    let io_err = |e: std::io::Error| Error::io(path.to_path_buf(), e);
    w.write_all(MAGIC).map_err(io_err)?;
    w_u16(&mut w, VERSION).map_err(io_err)?;
    w_u32(&mut w, kv.len() as u32).map_err(io_err)?;
    for (k, v) in &kv {
        w_str(&mut w, k).map_err(io_err)?;
        w_str(&mut w, v).map_err(io_err)?;
    }
    w_u32(&mut w, entries.len() as u32).map_err(io_err)?;
    for (p, t, kind) in &entries {
        w_str(&mut w, p).map_err(io_err)?;
        w.write_all(&[kind_code(*kind)]).map_err(io_err)?;
        t.write_smgt(&mut w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Rebuild a network from a checkpoint; returns it with the non-model
/// metadata keys that were stored alongside.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0; 4];
    r.read_exact(&mut magic).map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::data(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r_u16(&mut r).map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }

    let n_kv = r_u32(&mut r).map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
    let mut kv = BTreeMap::new();
    for _ in 0..n_kv {
        let k = r_str(&mut r)?;
        let v = r_str(&mut r)?;
        if kv.insert(k.clone(), v).is_some() {
            return Err(Error::data(format!("duplicate checkpoint key {k:?}")));
        }
    }

    let config = ModelConfig::from_kv(&kv)?;
    let dur_text = kv
        .get("duration")
        .ok_or_else(|| Error::data("checkpoint is missing duration"))?;
    let secs: f64 = dur_text
        .parse()
        .map_err(|_| Error::data(format!("bad checkpoint duration {dur_text:?}")))?;
    let duration = Duration::from_secs(secs)?;

    let n_entries = r_u32(&mut r).map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
    let mut tensors: BTreeMap<String, (Tensor, u8)> = BTreeMap::new();
    for _ in 0..n_entries {
        let p = r_str(&mut r)?;
        let mut kind = [0; 1];
        r.read_exact(&mut kind).map_err(|e| Error::data(format!("checkpoint truncated: {e}")))?;
        let t = Tensor::read_smgt(&mut r)?;
        if tensors.insert(p.clone(), (t, kind[0])).is_some() {
            return Err(Error::data(format!("duplicate checkpoint tensor {p:?}")));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::data(e.to_string()))? != 0 {
        return Err(Error::data("checkpoint has trailing bytes"));
    }

    let mut net = Network::new(&config, duration, 0)?;
    let mut problems = Vec::new();
    net.visit_mut("", &mut |p, slot, kind| match tensors.remove(p) {
        None => problems.push(format!("checkpoint is missing tensor {p:?}")),
        Some((t, code)) => {
            if code != kind_code(kind) {
                problems.push(format!("tensor {p:?} kind mismatch"));
            } else if t.shape() != slot.shape() {
                problems.push(format!(
                    "tensor {p:?} has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                ));
            } else {
                slot.data_mut().copy_from_slice(t.data());
            }
        }
    });
    for p in tensors.keys() {
        problems.push(format!("checkpoint tensor {p:?} has no slot in the model"));
    }
    if let Some(first) = problems.into_iter().next() {
        return Err(Error::data(first));
    }

    let extras = kv
        .into_iter()
        .filter(|(k, _)| !k.starts_with("model.") && k != "duration")
        .collect();
    Ok((net, extras))
}
