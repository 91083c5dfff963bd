//! Dense row-major f64 tensors and their binary serialization format.
//!
//! Logical axis order for 4-D data is `[batch, channels, frequency, time]`.
//! The on-disk format ("SMGT") is: magic `SMGT`, version u16 LE, rank u8,
//! extents as u64 LE, then the values as f64 LE in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const SMGT_MAGIC: &[u8; 4] = b"SMGT";
pub const SMGT_VERSION: u16 = 1;
/// 4-D `[B,C,F,T]` maps are the largest shape the pipeline produces.
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    /// Rank 0 (scalar, one value) through rank 4; every extent must be positive.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::check_shape(shape).expect("invalid tensor shape");
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], requires_grad: false }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "shape {:?} holds {} values but {} were provided",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value], requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    fn check_shape(shape: &[usize]) -> Result<()> {
        if shape.len() > MAX_RANK {
            return Err(Error::config(format!(
                "rank {} exceeds the supported maximum {MAX_RANK}",
                shape.len()
            )));
        }
        if let Some(pos) = shape.iter().position(|&e| e == 0) {
            return Err(Error::config(format!("extent {pos} of shape {shape:?} is zero")));
        }
        Ok(())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index, row-major.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // ── SMGT serialization ──────────────────────────────────────────────

    pub fn write_smgt<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(SMGT_MAGIC)?;
        w.write_all(&SMGT_VERSION.to_le_bytes())?;
        w.write_all(&[self.rank() as u8])?;
        for &e in &self.shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads exactly one tensor and leaves the reader positioned after it.
    pub fn read_smgt<R: Read>(r: &mut R) -> Result<Self> {
        let err = |msg: &str| Error::data(format!("SMGT: {msg}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| err("truncated header"))?;
        if &magic != SMGT_MAGIC {
            return Err(err("bad magic, not an SMGT stream"));
        }
        let mut v2 = [0u8; 2];
        r.read_exact(&mut v2).map_err(|_| err("truncated version"))?;
        let version = u16::from_le_bytes(v2);
        if version != SMGT_VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank).map_err(|_| err("truncated rank"))?;
        let rank = rank[0] as usize;
        if rank > MAX_RANK {
            return Err(err(&format!("rank {rank} exceeds the supported maximum {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for i in 0..rank {
            let mut e8 = [0u8; 8];
            r.read_exact(&mut e8).map_err(|_| err("truncated extents"))?;
            let e = u64::from_le_bytes(e8);
            if e == 0 {
                return Err(err(&format!("extent {i} is zero")));
            }
            let e = usize::try_from(e).map_err(|_| err("extent overflows usize"))?;
            n = n.checked_mul(e).ok_or_else(|| err("element count overflows"))?;
            shape.push(e);
        }
        if n.checked_mul(8).is_none() || n > (1 << 33) {
            return Err(err("element count implausibly large"));
        }
        let mut data = vec![0.0f64; n];
        let mut buf = [0u8; 8];
        for slot in data.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| err("truncated data"))?;
            *slot = f64::from_le_bytes(buf);
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_smgt(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Rejects trailing bytes; a standalone file holds exactly one tensor.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        let t = Self::read_smgt(&mut r)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::data(format!("{}: trailing bytes after tensor", path.display())));
        }
        Ok(t)
    }
}

/// Broadcast result shape for same-rank operands where size-1 axes stretch.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "broadcast requires equal ranks, got {a:?} vs {b:?}"
        )));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&ea, &eb))| {
            if ea == eb || ea == 1 || eb == 1 {
                Ok(ea.max(eb))
            } else {
                Err(Error::config(format!(
                    "axis {i} incompatible for broadcast: {a:?} vs {b:?}"
                )))
            }
        })
        .collect()
}
