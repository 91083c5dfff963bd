//! Deepfake detection for ultra-short audio (0.5–2.0 s) under communication
//! degradations: cepstral feature frontend, codec/packet-loss simulator, a
//! two-stage attention detector with its own autodiff engine, training loop,
//! and EER/RTF/complexity evaluation.

pub mod config;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod manifest;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Splitmix-style mix of two words into one seed, for deriving independent
/// RNG streams from (run seed, stream id) pairs.
pub(crate) fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
