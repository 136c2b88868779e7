//! Labelled synthetic force traces with controllable per-user signatures.
//!
//! Each trace follows a task-specific 2-D stroke template (a letter path)
//! traversed with a per-trial time warp. The vertical force is a press
//! profile plus a tremor sinusoid plus white noise; the lateral forces are
//! proportional to the pen velocity along the path and to the centripetal
//! term of its curvature, scaled by the user's stiffness.
//!
//! Signature parameters are drawn per user from stratified ranges: every
//! parameter range is split into `num_users` strata and each user gets a
//! different stratum, so distinct users always differ in every parameter.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ForceSample, ForceTrace, TraceKey, Variant};
use crate::error::{Error, Result};
use crate::{derive_seed, DEFAULT_SAMPLE_RATE};

pub const LETTER_TASKS: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];

/// Behavioural signature of one synthetic operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSignature {
    /// Mean downward press force, N.
    pub press_force: f64,
    /// Relative trial-to-trial and within-trial press variation.
    pub press_variance: f64,
    /// Hz.
    pub tremor_freq: f64,
    /// N.
    pub tremor_amp: f64,
    /// Writing speed multiplier; faster users finish sooner.
    pub speed_scale: f64,
    /// Sensor noise standard deviation, N.
    pub noise_std: f64,
    /// Lateral force per unit pen velocity, N·s per template unit.
    pub stiffness: f64,
}

impl UserSignature {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("press_force", self.press_force),
            ("tremor_freq", self.tremor_freq),
            ("speed_scale", self.speed_scale),
            ("stiffness", self.stiffness),
        ];
        let non_negative = [
            ("press_variance", self.press_variance),
            ("tremor_amp", self.tremor_amp),
            ("noise_std", self.noise_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Closed intervals from which user signatures are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureRanges {
    pub press_force: (f64, f64),
    pub press_variance: (f64, f64),
    pub tremor_freq: (f64, f64),
    pub tremor_amp: (f64, f64),
    pub speed_scale: (f64, f64),
    pub noise_std: (f64, f64),
    pub stiffness: (f64, f64),
}

impl Default for SignatureRanges {
    fn default() -> Self {
        SignatureRanges {
            press_force: (0.5, 5.0),
            press_variance: (0.02, 0.2),
            tremor_freq: (4.0, 12.0),
            tremor_amp: (0.02, 0.3),
            speed_scale: (0.7, 1.4),
            noise_std: (0.001, 0.01),
            stiffness: (0.4, 2.0),
        }
    }
}

impl SignatureRanges {
    fn all(&self) -> [(&'static str, (f64, f64)); 7] {
        [
            ("press_force", self.press_force),
            ("press_variance", self.press_variance),
            ("tremor_freq", self.tremor_freq),
            ("tremor_amp", self.tremor_amp),
            ("speed_scale", self.speed_scale),
            ("noise_std", self.noise_std),
            ("stiffness", self.stiffness),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_users: usize,
    pub tasks: Vec<String>,
    pub trials_per_task: usize,
    pub seed: u64,
    pub sample_rate: f64,
    /// Nominal trial duration in seconds before the user's speed scaling.
    pub duration_range: (f64, f64),
    pub ranges: SignatureRanges,
    /// Explicit signatures, one per user, overriding the ranges.
    pub users: Option<Vec<UserSignature>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 15,
            tasks: LETTER_TASKS.iter().map(|s| s.to_string()).collect(),
            trials_per_task: 120,
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration_range: (2.0, 4.0),
            ranges: SignatureRanges::default(),
            users: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users < 2 {
            return Err(Error::Config(format!("num_users must be at least 2, got {}", self.num_users)));
        }
        if self.trials_per_task < 1 {
            return Err(Error::Config("trials_per_task must be at least 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task label is required".into()));
        }
        let mut sorted = self.tasks.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.tasks.len() {
            return Err(Error::Config("task labels must be distinct".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid duration range ({lo}, {hi})")));
        }
        for (name, (lo, hi)) in self.ranges.all() {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Config(format!("invalid {name} range ({lo}, {hi})")));
            }
        }
        if let Some(users) = &self.users {
            if users.len() != self.num_users {
                return Err(Error::Config(format!(
                    "{} explicit signatures for {} users",
                    users.len(),
                    self.num_users
                )));
            }
            users.iter().try_for_each(UserSignature::validate)?;
        }
        Ok(())
    }

    /// User labels `u01`, `u02`, …
    pub fn user_labels(&self) -> Vec<String> {
        let width = self.num_users.to_string().len().max(2);
        (1..=self.num_users).map(|i| format!("u{i:0width$}")).collect()
    }

    /// The signature of every user, in label order.
    pub fn signatures(&self) -> Result<Vec<UserSignature>> {
        self.validate()?;
        if let Some(users) = &self.users {
            return Ok(users.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "signatures"));
        let n = self.num_users;
        let mut columns = Vec::new();
        for (_, (lo, hi)) in self.ranges.all() {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(&mut rng);
            let width = (hi - lo) / n as f64;
            let values: Vec<f64> = strata
                .into_iter()
                .map(|s| lo + width * (s as f64 + rng.random_range(0.15..0.85)))
                .collect();
            columns.push(values);
        }
        Ok((0..n)
            .map(|u| UserSignature {
                press_force: columns[0][u],
                press_variance: columns[1][u],
                tremor_freq: columns[2][u],
                tremor_amp: columns[3][u],
                speed_scale: columns[4][u],
                noise_std: columns[5][u],
                stiffness: columns[6][u],
            })
            .collect())
    }
}

/// Generate `num_users × tasks × trials_per_task` raw traces. A pure
/// function of the configuration.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let signatures = cfg.signatures()?;
    let users = cfg.user_labels();
    let mut traces = Vec::with_capacity(users.len() * cfg.tasks.len() * cfg.trials_per_task);
    for (user, sig) in users.iter().zip(&signatures) {
        for task in &cfg.tasks {
            let path = StrokePath::for_task(task);
            for trial in 0..cfg.trials_per_task {
                let key = TraceKey::new(user, task, trial as u32, Variant::Raw);
                traces.push(synth_trace(cfg, sig, &path, key)?);
            }
        }
    }
    Dataset::new(traces)
}

fn synth_trace(cfg: &SynthConfig, sig: &UserSignature, path: &StrokePath, key: TraceKey) -> Result<ForceTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &key.to_string()));
    let (lo, hi) = cfg.duration_range;
    let nominal = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let duration = nominal / sig.speed_scale;
    let rate = cfg.sample_rate;
    let n = ((duration * rate).round() as usize).max(8);
    let duration = (n - 1) as f64 / rate;

    let warp = rng.random_range(0.0..0.35);
    let press_gain = 1.0 + sig.press_variance * rng.random_range(-1.0..1.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let tremor_phase = rng.random_range(0.0..2.0 * PI);
    let tremor_freq = sig.tremor_freq * rng.random_range(0.97..1.03);
    let noise = Normal::new(0.0, sig.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let tau = t / duration;
        // s(τ) = τ − w·sin(2πτ)/2π keeps s monotone for w < 1
        let s = tau - warp * (2.0 * PI * tau).sin() / (2.0 * PI);
        let ds_dt = (1.0 - warp * (2.0 * PI * tau).cos()) / duration;
        let (_, d1, d2) = path.eval(s);
        let (vx, vy) = (d1.0 * ds_dt, d1.1 * ds_dt);
        let (ax, ay) = (d2.0 * ds_dt * ds_dt, d2.1 * ds_dt * ds_dt);
        let speed2 = vx * vx + vy * vy;
        // unit normal times curvature·speed² is the normal part of acceleration
        let (nx, ny) = if speed2 > 1e-12 {
            let along = (ax * vx + ay * vy) / speed2;
            (ax - along * vx, ay - along * vy)
        } else {
            (0.0, 0.0)
        };
        let envelope = smoothstep(tau / 0.08) * smoothstep((1.0 - tau) / 0.08);
        let drift = 1.0 + 0.5 * sig.press_variance * (2.0 * PI * 0.4 * t + drift_phase).sin();
        let press = sig.press_force * press_gain * drift * envelope;
        let tremor = sig.tremor_amp * (2.0 * PI * tremor_freq * t + tremor_phase).sin();
        let fx = sig.stiffness * (vx + 0.05 * nx) + 0.2 * tremor + noise.sample(&mut rng);
        let fy = sig.stiffness * (vy + 0.05 * ny) + 0.2 * tremor + noise.sample(&mut rng);
        let fz = -(press + tremor) + noise.sample(&mut rng);
        samples.push(ForceSample::new(t, fx as f32, fy as f32, fz as f32));
    }
    ForceTrace::new(key, rate, samples)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Catmull-Rom spline through a letter's control points, parameterised by
/// `s ∈ [0, 1]` with equal parameter length per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokePath {
    points: Vec<(f64, f64)>,
}

impl StrokePath {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("a stroke needs at least two points".into()));
        }
        Ok(StrokePath { points })
    }

    /// Hand-drawn template for the letters a–g, and a label-seeded random
    /// stroke for any other task label.
    pub fn for_task(task: &str) -> StrokePath {
        let points: Vec<(f64, f64)> = match task {
            "a" => vec![(0.8, 0.7), (0.5, 0.9), (0.2, 0.7), (0.2, 0.3), (0.5, 0.1), (0.8, 0.3), (0.8, 0.7), (0.85, 0.0)],
            "b" => vec![(0.2, 1.0), (0.2, 0.5), (0.2, 0.0), (0.2, 0.4), (0.5, 0.6), (0.8, 0.4), (0.75, 0.1), (0.4, 0.0), (0.2, 0.1)],
            "c" => vec![(0.8, 0.8), (0.5, 1.0), (0.2, 0.75), (0.15, 0.4), (0.3, 0.1), (0.55, 0.0), (0.85, 0.2)],
            "d" => vec![(0.8, 0.45), (0.5, 0.6), (0.2, 0.4), (0.25, 0.1), (0.5, 0.0), (0.8, 0.15), (0.8, 1.0), (0.8, 0.5), (0.85, 0.0)],
            "e" => vec![(0.2, 0.5), (0.8, 0.5), (0.7, 0.8), (0.45, 0.9), (0.2, 0.7), (0.2, 0.3), (0.5, 0.0), (0.85, 0.2)],
            "f" => vec![(0.85, 0.9), (0.6, 1.0), (0.4, 0.85), (0.4, 0.4), (0.4, 0.0), (0.4, 0.5), (0.15, 0.5), (0.7, 0.5)],
            "g" => vec![(0.8, 0.7), (0.5, 0.9), (0.2, 0.7), (0.3, 0.4), (0.6, 0.4), (0.8, 0.7), (0.8, -0.2), (0.5, -0.45), (0.2, -0.25)],
            other => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, other));
                (0..7)
                    .map(|_| (rng.random_range(0.0..1.0), rng.random_range(-0.4..1.0)))
                    .collect()
            }
        };
        StrokePath { points }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Position, first and second derivative with respect to `s`.
    pub fn eval(&self, s: f64) -> ((f64, f64), (f64, f64), (f64, f64)) {
        let segments = self.points.len() - 1;
        let x = s.clamp(0.0, 1.0) * segments as f64;
        let seg = (x.floor() as usize).min(segments - 1);
        let u = x - seg as f64;
        let p = |i: isize| self.points[i.clamp(0, segments as isize) as usize];
        let i = seg as isize;
        let (p0, p1, p2, p3) = (p(i - 1), p(i), p(i + 1), p(i + 2));
        let axis = |a: f64, b: f64, c: f64, d: f64| {
            // 0.5·(2b + (−a+c)u + (2a−5b+4c−d)u² + (−a+3b−3c+d)u³)
            let c1 = -a + c;
            let c2 = 2.0 * a - 5.0 * b + 4.0 * c - d;
            let c3 = -a + 3.0 * b - 3.0 * c + d;
            let pos = 0.5 * (2.0 * b + c1 * u + c2 * u * u + c3 * u * u * u);
            let d1 = 0.5 * (c1 + 2.0 * c2 * u + 3.0 * c3 * u * u);
            let d2 = 0.5 * (2.0 * c2 + 6.0 * c3 * u);
            // chain rule for dx/ds = segments
            let k = segments as f64;
            (pos, d1 * k, d2 * k * k)
        };
        let (x0, x1, x2) = axis(p0.0, p1.0, p2.0, p3.0);
        let (y0, y1, y2) = axis(p0.1, p1.1, p2.1, p3.1);
        ((x0, y0), (x1, y1), (x2, y2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_users: 3,
            tasks: vec!["a".into(), "b".into()],
            trials_per_task: 2,
            seed: 42,
            duration_range: (0.5, 1.0),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_dataset(&small()).unwrap();
        let b = synth_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let other = synth_dataset(&SynthConfig { seed: 43, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn shape_and_labels() {
        let d = synth_dataset(&small()).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.users(), vec!["u01", "u02", "u03"]);
        assert_eq!(d.tasks(), vec!["a", "b"]);
    }

    #[test]
    fn rejects_invalid_config() {
        for cfg in [
            SynthConfig { num_users: 1, ..small() },
            SynthConfig { trials_per_task: 0, ..small() },
            SynthConfig { tasks: vec![], ..small() },
            SynthConfig { duration_range: (2.0, 1.0), ..small() },
        ] {
            assert!(matches!(synth_dataset(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn strata_separate_users() {
        let sigs = SynthConfig { num_users: 5, ..small() }.signatures().unwrap();
        let mut freqs: Vec<f64> = sigs.iter().map(|s| s.tremor_freq).collect();
        freqs.sort_by(f64::total_cmp);
        for w in freqs.windows(2) {
            // strata are 1.6 Hz wide and draws stay 15% away from the edges
            assert!(w[1] - w[0] > 0.45, "{freqs:?}");
        }
    }

    #[test]
    fn stroke_endpoints() {
        let path = StrokePath::for_task("c");
        let (start, _, _) = path.eval(0.0);
        let (end, _, _) = path.eval(1.0);
        assert_eq!(start, path.points()[0]);
        let last = *path.points().last().unwrap();
        assert!((end.0 - last.0).abs() < 1e-12 && (end.1 - last.1).abs() < 1e-12);
    }
}
