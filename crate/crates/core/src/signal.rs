//! EMA filtering, fixed-length resampling and per-channel z-scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Smoothing constant of the haptic-rendering filter.
pub const DEFAULT_EMA_ALPHA: f32 = 0.001;

/// Lower bound applied to fitted standard deviations.
pub const STD_FLOOR: f32 = 1e-8;

/// Per-channel exponential moving average: `y[0] = x[0]`,
/// `y[t] = y[t−1] + α·(x[t] − y[t−1])`.
///
/// With `α = 1` the recurrence reduces to `y = x`, which is returned as is
/// rather than through the rounding of `y + (x − y)`.
pub fn ema_filter(values: &Matrix, alpha: f32) -> Result<Matrix> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("EMA alpha {alpha} outside (0, 1]")));
    }
    if values.rows() == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut out = values.clone();
    if alpha == 1.0 {
        return Ok(out);
    }
    for t in 1..values.rows() {
        for c in 0..values.cols() {
            let prev = out.get(t - 1, c);
            out.row_mut(t)[c] = prev + alpha * (values.get(t, c) - prev);
        }
    }
    Ok(out)
}

/// Linear interpolation at `target_len` evenly spaced positions over
/// `[0, T−1]`. The first and last rows are copied exactly.
pub fn resample(seq: &Matrix, target_len: usize) -> Result<Matrix> {
    if seq.rows() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: seq.rows(),
        });
    }
    if target_len < 2 {
        return Err(Error::Config(format!("target length {target_len} must be at least 2")));
    }
    let last = seq.rows() - 1;
    let mut out = Matrix::zeros(target_len, seq.cols());
    for i in 0..target_len {
        let pos = (i * last) as f64 / (target_len - 1) as f64;
        let lo = (pos.floor() as usize).min(last);
        let frac = pos - lo as f64;
        let dst = out.row_mut(i);
        if lo == last || frac == 0.0 {
            dst.copy_from_slice(seq.row(lo));
            continue;
        }
        let (a, b) = (seq.row(lo), seq.row(lo + 1));
        for c in 0..a.len() {
            let (a, b) = (f64::from(a[c]), f64::from(b[c]));
            dst[c] = (a + (b - a) * frac) as f32;
        }
    }
    Ok(out)
}

/// Per-channel mean and standard deviation fitted on training sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Pooled per-channel population statistics over every row of every
/// sequence. Standard deviations are clamped to at least [`STD_FLOOR`].
pub fn zscore_fit<'a, I>(train: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Matrix>,
{
    let seqs: Vec<&Matrix> = train.into_iter().collect();
    let first = seqs
        .first()
        .ok_or_else(|| Error::Config("cannot fit normalisation on an empty collection".into()))?;
    let channels = first.cols();
    let mut count = 0usize;
    let mut sum = vec![0f64; channels];
    for s in &seqs {
        if s.cols() != channels {
            return Err(Error::Dimension(format!("{} channels, expected {channels}", s.cols())));
        }
        for row in s.iter_rows() {
            for (acc, &v) in sum.iter_mut().zip(row) {
                *acc += f64::from(v);
            }
        }
        count += s.rows();
    }
    if count == 0 {
        return Err(Error::Config("cannot fit normalisation on empty sequences".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0f64; channels];
    for s in &seqs {
        for row in s.iter_rows() {
            for c in 0..channels {
                let d = f64::from(row[c]) - mean[c];
                sq[c] += d * d;
            }
        }
    }
    Ok(NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: sq
            .iter()
            .map(|&s| ((s / count as f64).sqrt() as f32).max(STD_FLOOR))
            .collect(),
    })
}

/// `(x − mean) / std` per channel.
pub fn zscore_apply(seq: &Matrix, stats: &NormStats) -> Result<Matrix> {
    check_channels(seq, stats)?;
    let mut out = seq.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - stats.mean[c]) / stats.std[c];
        }
    }
    Ok(out)
}

/// Inverse of [`zscore_apply`].
pub fn zscore_invert(seq: &Matrix, stats: &NormStats) -> Result<Matrix> {
    check_channels(seq, stats)?;
    let mut out = seq.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = *v * stats.std[c] + stats.mean[c];
        }
    }
    Ok(out)
}

fn check_channels(seq: &Matrix, stats: &NormStats) -> Result<()> {
    if seq.cols() != stats.channels() || stats.std.len() != stats.channels() {
        return Err(Error::Dimension(format!(
            "sequence has {} channels, statistics have {}",
            seq.cols(),
            stats.channels()
        )));
    }
    Ok(())
}
