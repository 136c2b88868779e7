//! Derivative force features: force-difference norm, velocity, acceleration
//! and jerk vectors with their norms (13 channels).
//!
//! Derivatives are cascaded first differences scaled by the sample rate. The
//! streams are truncated to the common length `T − 3` by dropping trailing
//! rows, so feature row `t` is anchored at force sample `t`.

use crate::dataset::{ForceTrace, TraceKey};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::{resample, zscore_apply, NormStats};

pub const NUM_FEATURES: usize = 13;

/// Channel names in model-input order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "dF_norm", "vx", "vy", "vz", "v_norm", "ax", "ay", "az", "a_norm", "jx", "jy", "jz", "j_norm",
];

/// Fixed-length model input with its class index and source trace.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub values: Matrix,
    pub label: usize,
    pub source: TraceKey,
}

/// `out[t] = (seq[t+1] − seq[t]) · rate`
pub fn differentiate(seq: &Matrix, rate: f64) -> Result<Matrix> {
    if seq.rows() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: seq.rows(),
        });
    }
    let wide: Vec<f64> = seq.data().iter().map(|&v| f64::from(v)).collect();
    let d = diff(&wide, seq.cols(), rate);
    Matrix::new(seq.rows() - 1, seq.cols(), d.into_iter().map(|v| v as f32).collect())
}

fn diff(rows: &[f64], cols: usize, rate: f64) -> Vec<f64> {
    rows[cols..]
        .iter()
        .zip(rows)
        .map(|(next, cur)| (next - cur) * rate)
        .collect()
}

fn norm3(v: &[f64]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Thirteen derivative features of a `T×3` force matrix, `(T−3)×13`.
///
/// Intermediate arithmetic runs in f64; differences of f32 inputs scaled by
/// an integral rate are exact there.
pub fn extract_features(forces: &Matrix, rate: f64) -> Result<Matrix> {
    if forces.cols() != 3 {
        return Err(Error::Dimension(format!("expected 3 force channels, got {}", forces.cols())));
    }
    if forces.rows() < 4 {
        return Err(Error::TooShort {
            needed: 4,
            got: forces.rows(),
        });
    }
    let f: Vec<f64> = forces.data().iter().map(|&v| f64::from(v)).collect();
    let vel = diff(&f, 3, rate);
    let acc = diff(&vel, 3, rate);
    let jerk = diff(&acc, 3, rate);
    let rows = forces.rows() - 3;
    let mut out = Vec::with_capacity(rows * NUM_FEATURES);
    for t in 0..rows {
        let step = [f[3 * t + 3] - f[3 * t], f[3 * t + 4] - f[3 * t + 1], f[3 * t + 5] - f[3 * t + 2]];
        out.push(norm3(&step));
        for stream in [&vel, &acc, &jerk] {
            let v = &stream[3 * t..3 * t + 3];
            out.extend_from_slice(v);
            out.push(norm3(v));
        }
    }
    Matrix::new(rows, NUM_FEATURES, out.into_iter().map(|v| v as f32).collect())
}

/// Feature extraction plus the raw `(fx, fy, fz)` of each anchored row
/// appended as channels 13–15.
pub fn extract_features_with_force(forces: &Matrix, rate: f64) -> Result<Matrix> {
    let base = extract_features(forces, rate)?;
    let mut data = Vec::with_capacity(base.rows() * (NUM_FEATURES + 3));
    for t in 0..base.rows() {
        data.extend_from_slice(base.row(t));
        data.extend_from_slice(forces.row(t));
    }
    Matrix::new(base.rows(), NUM_FEATURES + 3, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PipelineOptions {
    pub target_len: usize,
    pub append_raw_force: bool,
}

impl PipelineOptions {
    pub fn new(target_len: usize) -> Self {
        PipelineOptions {
            target_len,
            append_raw_force: false,
        }
    }

    pub fn channels(&self) -> usize {
        if self.append_raw_force {
            NUM_FEATURES + 3
        } else {
            NUM_FEATURES
        }
    }
}

/// Extract features, resample them to `target_len`, then optionally
/// z-score.
pub fn pipeline(
    trace: &ForceTrace,
    target_len: usize,
    stats: Option<&NormStats>,
    label: usize,
) -> Result<FeatureSequence> {
    pipeline_with(trace, &PipelineOptions::new(target_len), stats, label)
}

pub fn pipeline_with(
    trace: &ForceTrace,
    opts: &PipelineOptions,
    stats: Option<&NormStats>,
    label: usize,
) -> Result<FeatureSequence> {
    let forces = trace.forces();
    let features = if opts.append_raw_force {
        extract_features_with_force(&forces, trace.sample_rate())?
    } else {
        extract_features(&forces, trace.sample_rate())?
    };
    let mut values = resample(&features, opts.target_len)?;
    if let Some(stats) = stats {
        values = zscore_apply(&values, stats)?;
    }
    Ok(FeatureSequence {
        values,
        label,
        source: trace.key().clone(),
    })
}
