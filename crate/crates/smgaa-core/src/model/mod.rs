//! Detector model: shared layer primitives, the attention blocks, network
//! assembly, and the checkpoint container.

mod blocks;
mod checkpoint;
mod layers;
mod net;

pub use blocks::{Ca, Cfeb, Fcem, MfaBranch, Mgaa, Pcem, Pd, SmgaaBlock, Tfc};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{BatchNorm, Conv2d, Linear, Mode, ParamKind, Session, Visitable};
pub use net::{count_flops, count_params, Network};

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Frequency-bin count the pooling targets are expressed against; targets are
/// rescaled proportionally when a stage runs at a different resolution.
pub const REF_F: usize = 60;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Ablation variant: which blocks are live. `Full` is the shipping model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoPcem,
    NoMgaa,
    NoFcem,
    /// Stage-1 attention only; stage 2 is a pass-through.
    ShallowOnly,
    /// Stage-2 attention only; stage 1 is a pass-through.
    DeepOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoPcem,
        Variant::NoMgaa,
        Variant::NoFcem,
        Variant::ShallowOnly,
        Variant::DeepOnly,
    ];

    pub fn use_pcem(self) -> bool {
        self != Variant::NoPcem
    }
    pub fn use_mgaa(self) -> bool {
        self != Variant::NoMgaa
    }
    pub fn use_fcem(self) -> bool {
        self != Variant::NoFcem
    }
    pub fn stage1(self) -> bool {
        self != Variant::DeepOnly
    }
    pub fn stage2(self) -> bool {
        self != Variant::ShallowOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::NoPcem => "no_pcem",
            Variant::NoMgaa => "no_mgaa",
            Variant::NoFcem => "no_fcem",
            Variant::ShallowOnly => "shallow_only",
            Variant::DeepOnly => "deep_only",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_pcem" => Ok(Variant::NoPcem),
            "no_mgaa" => Ok(Variant::NoMgaa),
            "no_fcem" => Ok(Variant::NoFcem),
            "shallow_only" => Ok(Variant::ShallowOnly),
            "deep_only" => Ok(Variant::DeepOnly),
            other => Err(Error::config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub stem_channels: usize,
    pub cfeb_channels: (usize, usize),
    /// Channel reduction in the channel-attention and band-gate bottlenecks.
    pub kappa: usize,
    /// Channel reduction in the multi-scale frequency branches.
    pub kappa2: usize,
    /// Frequency kernel lengths of the three local branches.
    pub k_list: [usize; 3],
    /// Adaptive pooling targets of the three global branches, at `REF_F` bins.
    pub pool_targets: [usize; 3],
    /// Frequency extent of the depthwise attention-interaction kernel.
    pub afi_kernel: usize,
    /// Frequency bins entering the stem.
    pub input_f: usize,
    /// Frequency-band count of the band-gate module, per stage.
    pub granularity: (usize, usize),
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stem_channels: 16,
            cfeb_channels: (64, 128),
            kappa: 8,
            kappa2: 2,
            k_list: [20, 15, 10],
            pool_targets: [20, 30, 20],
            afi_kernel: 7,
            input_f: 60,
            granularity: (4, 3),
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Small configuration for finite-difference work: same topology, a few
    /// thousand parameters instead of a few hundred thousand.
    pub fn reduced() -> Self {
        ModelConfig {
            stem_channels: 8,
            cfeb_channels: (12, 16),
            kappa: 4,
            kappa2: 2,
            k_list: [5, 4, 3],
            pool_targets: [20, 30, 20],
            afi_kernel: 7,
            input_f: 12,
            granularity: (4, 3),
            variant: Variant::Full,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Frequency resolution of each attention stage: full at stage 1, then
    /// two halvings from the intermediate 2x pooling layers.
    pub fn stage_f(&self) -> (usize, usize) {
        (self.input_f, self.input_f / 4)
    }

    /// Pooling targets rescaled to a stage running at `f` bins.
    pub fn scaled_pool_targets(&self, f: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for (slot, &t) in out.iter_mut().zip(&self.pool_targets) {
            *slot = (f * t).div_ceil(REF_F);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::config(msg)) };
        check(self.input_f >= 4 && self.input_f % 4 == 0, format!(
            "input_f {} must be a positive multiple of 4 so both pooling layers halve it exactly",
            self.input_f
        ))?;
        check(self.kappa >= 1 && self.kappa2 >= 1, "reduction ratios must be at least 1".into())?;
        check(self.afi_kernel >= 1 && self.afi_kernel % 2 == 1, format!(
            "attention-interaction kernel {} must be odd so the map keeps its extent centred",
            self.afi_kernel
        ))?;
        for &k in &self.k_list {
            check(k >= 1, "branch kernels must be at least 1".into())?;
        }
        for &t in &self.pool_targets {
            check(t >= 1, "pooling targets must be at least 1".into())?;
        }
        let (f1, f2) = self.stage_f();
        for (stage, c, f, g) in [
            (1, self.stem_channels, f1, self.granularity.0),
            (2, self.cfeb_channels.1, f2, self.granularity.1),
        ] {
            check(c % self.kappa == 0 && c >= self.kappa, format!(
                "stage {stage} channels {c} must be a multiple of the reduction ratio {}",
                self.kappa
            ))?;
            check(c % self.kappa2 == 0, format!(
                "stage {stage} channels {c} must be a multiple of the branch reduction {}",
                self.kappa2
            ))?;
            check(g >= 1 && f % g == 0, format!(
                "stage {stage} has {f} bins, not divisible into {g} bands"
            ))?;
            for t in self.scaled_pool_targets(f) {
                check(t <= f, format!(
                    "stage {stage} pooling target {t} exceeds its {f} bins"
                ))?;
            }
        }
        Ok(())
    }

    /// Flat key=value form used by the checkpoint container.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("model.stem_channels".into(), self.stem_channels.to_string()),
            ("model.cfeb_channels".into(), format!("{},{}", self.cfeb_channels.0, self.cfeb_channels.1)),
            ("model.kappa".into(), self.kappa.to_string()),
            ("model.kappa2".into(), self.kappa2.to_string()),
            ("model.k_list".into(), join_list(&self.k_list)),
            ("model.pool_targets".into(), join_list(&self.pool_targets)),
            ("model.afi_kernel".into(), self.afi_kernel.to_string()),
            ("model.input_f".into(), self.input_f.to_string()),
            ("model.granularity".into(), format!("{},{}", self.granularity.0, self.granularity.1)),
            ("model.variant".into(), self.variant.to_string()),
        ]
    }

    pub fn from_kv(kv: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| {
            kv.get(key).ok_or_else(|| Error::data(format!("checkpoint is missing {key}")))
        };
        let config = ModelConfig {
            stem_channels: parse_field(get("model.stem_channels")?)?,
            cfeb_channels: parse_pair(get("model.cfeb_channels")?)?,
            kappa: parse_field(get("model.kappa")?)?,
            kappa2: parse_field(get("model.kappa2")?)?,
            k_list: parse_triple(get("model.k_list")?)?,
            pool_targets: parse_triple(get("model.pool_targets")?)?,
            afi_kernel: parse_field(get("model.afi_kernel")?)?,
            input_f: parse_field(get("model.input_f")?)?,
            granularity: parse_pair(get("model.granularity")?)?,
            variant: get("model.variant")?.parse()?,
        };
        config.validate()?;
        Ok(config)
    }
}

fn join_list(xs: &[usize]) -> String {
    xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_field(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::data(format!("bad numeric field {s:?}")))
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::data(format!("expected two comma-separated values, got {s:?}")));
    }
    Ok((parse_field(parts[0])?, parse_field(parts[1])?))
}

fn parse_triple(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::data(format!("expected three comma-separated values, got {s:?}")));
    }
    Ok([parse_field(parts[0])?, parse_field(parts[1])?, parse_field(parts[2])?])
}
