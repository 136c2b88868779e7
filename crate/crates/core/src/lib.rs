//! Haptic force-trace biometrics.
//!
//! The pipeline runs from recorded (or synthesised) three-axis force traces
//! through optional EMA filtering and derivative feature extraction to a
//! two-layer transformer encoder trained from scratch, and finally to
//! confusion-matrix evaluation of user-identification and task-classification
//! experiments.

pub mod dataset;
pub mod eval;
pub mod features;
pub mod model;
pub mod signal;
pub mod synth;
pub mod trainer;

mod error;
mod matrix;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Nominal recording rate of the force sensor, in hertz.
pub const DEFAULT_SAMPLE_RATE: f64 = 250.0;

/// Stable 64-bit FNV-1a hash, used to derive per-item seeds from labels.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Mix a base seed with a label into an independent stream seed.
pub(crate) fn derive_seed(base: u64, label: &str) -> u64 {
    let mut x = base ^ fnv1a(label.as_bytes());
    // splitmix64 finaliser
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
