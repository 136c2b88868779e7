//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `cargo test -p haptic-core --test acceptance -- [name ...]` runs a subset.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use haptic_autograd::GradCheckConfig;
use haptic_core::dataset::{Dataset, TraceKey, Variant};
use haptic_core::eval::{confusion_matrix, metrics, predict_batch};
use haptic_core::features::{extract_features, FeatureSequence};
use haptic_core::model::{gradcheck_model, write_checkpoint, ModelConfig};
use haptic_core::signal::ema_filter;
use haptic_core::synth::{synth_dataset, SynthConfig};
use haptic_core::trainer::{
    sweep_training_size, train, train_task_models, train_user_id_models, ExperimentConfig, ExperimentKind,
    TrainConfig, TrainedModel, DEFAULT_SWEEP_SIZES,
};
use haptic_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

const CHECKS: [(&str, Check); 9] = [
    ("gradcheck", gradient_correctness),
    ("feature-oracle", feature_oracle),
    ("filter-oracle", filter_oracle),
    ("protocol-shape", protocol_shape),
    ("separability", separability),
    ("overfit", overfit),
    ("sweep", sweep),
    ("determinism", determinism),
    ("metrics", metric_oracle),
];

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in CHECKS {
        if !wanted.is_empty() && !wanted.iter().any(|w| name.contains(w.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

fn gradient_correctness() -> Result<String, String> {
    let cfg = ModelConfig::standard(7, 64);
    // larger steps keep f64 cancellation error well below the tolerance
    let check = GradCheckConfig {
        eps: 1e-4,
        coordinates: 200,
        seed: 11,
        ..GradCheckConfig::default()
    };
    let report = gradcheck_model(&cfg, 2, &check).map_err(err)?;
    let detail = format!(
        "max rel error {:.3e} over {} coordinates ({} kink-straddling skipped)",
        report.max_rel_error, report.checked, report.skipped_kinks
    );
    ensure(report.checked >= 200, || format!("only {} coordinates checked", report.checked))?;
    ensure(report.max_rel_error < 1e-4, || detail.clone())?;
    Ok(detail)
}

// ----------------------------------------------------------------- features

fn random_forces(rng: &mut ChaCha8Rng, rows: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows * 3);
    let mut f = [0f32; 3];
    for _ in 0..rows {
        for v in &mut f {
            *v = (*v + rng.random_range(-0.05f32..0.05)).clamp(-20.0, 20.0);
        }
        data.extend_from_slice(&f);
    }
    Matrix::new(rows, 3, data).unwrap()
}

/// Direct finite-difference stencils for every feature of row `t`.
fn feature_row_oracle(f: &Matrix, t: usize, rate: f64) -> [f64; 13] {
    let at = |i: usize, c: usize| f64::from(f.get(t + i, c));
    let mut out = [0f64; 13];
    let mut df = [0f64; 3];
    let mut v = [0f64; 3];
    let mut a = [0f64; 3];
    let mut j = [0f64; 3];
    for c in 0..3 {
        df[c] = at(1, c) - at(0, c);
        v[c] = df[c] * rate;
        a[c] = (at(2, c) - 2.0 * at(1, c) + at(0, c)) * rate * rate;
        j[c] = (at(3, c) - 3.0 * at(2, c) + 3.0 * at(1, c) - at(0, c)) * rate * rate * rate;
    }
    let norm = |x: &[f64; 3]| x.iter().map(|e| e * e).sum::<f64>().sqrt();
    out[0] = norm(&df);
    out[1..4].copy_from_slice(&v);
    out[4] = norm(&v);
    out[5..8].copy_from_slice(&a);
    out[8] = norm(&a);
    out[9..12].copy_from_slice(&j);
    out[12] = norm(&j);
    out
}

fn feature_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rate = 250.0;
    let mut worst = 0f64;
    for _ in 0..100 {
        let rows = rng.random_range(4..=2000);
        let f = random_forces(&mut rng, rows);
        let got = extract_features(&f, rate).map_err(err)?;
        ensure(got.rows() == rows - 3 && got.cols() == 13, || format!("shape {}x{}", got.rows(), got.cols()))?;
        for t in 0..got.rows() {
            let want = feature_row_oracle(&f, t, rate);
            for c in 0..13 {
                let rel = (f64::from(got.get(t, c)) - want[c]).abs() / want[c].abs().max(1.0);
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative deviation {worst:.3e}"))?;
    Ok(format!("100 traces, max relative deviation {worst:.3e}"))
}

// ------------------------------------------------------------------- filter

fn filter_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let rows = rng.random_range(1..=2000);
        let x = random_forces(&mut rng, rows);
        let alpha = rng.random_range(1e-4f32..1.0);
        let got = ema_filter(&x, alpha).map_err(err)?;
        let mut y = [x.get(0, 0), x.get(0, 1), x.get(0, 2)];
        for t in 0..rows {
            for c in 0..3 {
                if t > 0 {
                    y[c] += alpha * (x.get(t, c) - y[c]);
                }
                ensure(got.get(t, c).to_bits() == y[c].to_bits(), || {
                    format!("alpha {alpha}: row {t} channel {c}: {} vs {}", got.get(t, c), y[c])
                })?;
            }
        }
        ensure(ema_filter(&x, 1.0).map_err(err)? == x, || "alpha = 1 is not the identity".into())?;
        let c = rng.random_range(-10f32..10.0);
        let flat = Matrix::new(rows, 3, vec![c; rows * 3]).unwrap();
        ensure(ema_filter(&flat, alpha).map_err(err)? == flat, || format!("constant {c} not fixed"))?;
    }
    Ok("100 traces bit-identical to the recurrence; identity and fixed point exact".into())
}

// --------------------------------------------------------------- experiments

fn tiny_model(seq_len: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        num_heads: 2,
        ffn_dim: 8,
        num_layers: 1,
        ..ModelConfig::standard(1, seq_len)
    }
}

fn check_disjoint(models: &[TrainedModel]) -> Result<(), String> {
    for m in models {
        let train: HashSet<_> = m.train_keys.iter().collect();
        ensure(train.len() == m.train_keys.len(), || format!("{}: duplicate training trace", m.id()))?;
        ensure(m.test_keys.iter().all(|k| !train.contains(k)), || {
            format!("{}: a test trace is also in the training split", m.id())
        })?;
    }
    Ok(())
}

fn protocol_shape() -> Result<String, String> {
    let data = synth_dataset(&SynthConfig {
        duration_range: (0.1, 0.2),
        seed: 41,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    ensure(data.len() == 12_600, || format!("{} traces", data.len()))?;
    let mut detail = Vec::new();
    for (kind, models_expected, classes, train_n, test_n) in
        [(ExperimentKind::UserId, 7, 15, 1500, 300), (ExperimentKind::Task, 15, 7, 700, 140)]
    {
        let mut cfg = ExperimentConfig::new(kind, Variant::Raw);
        cfg.model = tiny_model(kind.default_seq_len());
        cfg.train.epochs = 1;
        cfg.train.seed = 42;
        let models = match kind {
            ExperimentKind::UserId => train_user_id_models(&data, &cfg),
            ExperimentKind::Task => train_task_models(&data, &cfg),
        }
        .map_err(err)?;
        ensure(models.len() == models_expected, || format!("{kind}: {} models", models.len()))?;
        for m in &models {
            let c = &m.checkpoint.model.config;
            ensure(
                c.num_classes == classes && c.seq_len == kind.default_seq_len(),
                || format!("{}: K={} L={}", m.id(), c.num_classes, c.seq_len),
            )?;
            ensure(m.train_keys.len() == train_n && m.test_keys.len() == test_n, || {
                format!("{}: {} train / {} test", m.id(), m.train_keys.len(), m.test_keys.len())
            })?;
            let total: u64 = m.report.matrix.iter().flatten().sum();
            ensure(total == test_n as u64, || format!("{}: matrix total {total}", m.id()))?;
        }
        check_disjoint(&models)?;
        detail.push(format!("{kind}: {models_expected} models x {train_n}/{test_n}"));
    }
    Ok(format!("{}; splits disjoint", detail.join(", ")))
}

fn benchmark_model() -> ModelConfig {
    ModelConfig {
        d_model: 64,
        num_heads: 8,
        ffn_dim: 64,
        ..ModelConfig::standard(1, 64)
    }
}

/// Desk-scale runs take a few hundred optimiser steps, so the step size is
/// raised from the 1e-4 default.
fn benchmark_train() -> TrainConfig {
    TrainConfig {
        epochs: 50,
        learning_rate: 1e-3,
        train_per_class: 40,
        test_per_class: 10,
        seed: 51,
        ..TrainConfig::default()
    }
}

fn benchmark_data(users: usize, tasks: &[&str], trials: usize, seed: u64) -> Dataset {
    synth_dataset(&SynthConfig {
        num_users: users,
        tasks: tasks.iter().map(|t| t.to_string()).collect(),
        trials_per_task: trials,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn mean_accuracy(models: &[TrainedModel]) -> f64 {
    models.iter().map(|m| m.report.accuracy).sum::<f64>() / models.len() as f64
}

fn separability() -> Result<String, String> {
    let data = benchmark_data(5, &["a", "b", "c"], 50, 52);
    let mut results = Vec::new();
    for kind in [ExperimentKind::UserId, ExperimentKind::Task] {
        let cfg = ExperimentConfig {
            kind,
            variant: Variant::Raw,
            model: benchmark_model(),
            train: benchmark_train(),
        };
        let models = match kind {
            ExperimentKind::UserId => train_user_id_models(&data, &cfg),
            ExperimentKind::Task => train_task_models(&data, &cfg),
        }
        .map_err(err)?;
        check_disjoint(&models)?;
        results.push((kind, mean_accuracy(&models)));
    }
    let detail = results
        .iter()
        .map(|(k, a)| format!("{k} accuracy {:.1}%", 100.0 * a))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(results.iter().all(|&(_, a)| a >= 0.90), || detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------------ overfit

fn toy_fixture() -> Vec<FeatureSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    (0..8)
        .map(|i| FeatureSequence {
            values: Matrix::new(16, 13, (0..16 * 13).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap(),
            label: i % 4,
            source: TraceKey::new("toy", "toy", i as u32, Variant::Raw),
        })
        .collect()
}

fn overfit() -> Result<String, String> {
    let set = toy_fixture();
    let model_cfg = ModelConfig {
        d_model: 32,
        num_heads: 4,
        ffn_dim: 32,
        ..ModelConfig::standard(4, 16)
    };
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 1e-3,
        seed: 62,
        ..TrainConfig::default()
    };
    let (model, history) = train(&cfg, &model_cfg, &set).map_err(err)?;
    let inputs: Vec<&Matrix> = set.iter().map(|s| &s.values).collect();
    let preds = predict_batch(&model, &inputs).map_err(err)?;
    let correct = preds.iter().zip(&set).filter(|(p, s)| **p == s.label).count();
    let (first, last) = (history.loss[0], history.loss[history.len() - 1]);
    let detail = format!("train accuracy {correct}/8, loss {first:.3} -> {last:.4}");
    ensure(correct == 8, || detail.clone())?;
    ensure(first / last >= 10.0, || format!("{detail}: loss fell less than 10x"))?;
    Ok(detail)
}

// -------------------------------------------------------------------- sweep

/// Sizes up to 100 need 120 trials per class; one task with three users
/// keeps the twenty training runs within a few minutes.
fn sweep() -> Result<String, String> {
    let data = benchmark_data(3, &["a"], 120, 71);
    let cfg = ExperimentConfig {
        kind: ExperimentKind::UserId,
        variant: Variant::Raw,
        model: benchmark_model(),
        train: TrainConfig {
            epochs: 40,
            test_per_class: 20,
            ..benchmark_train()
        },
    };
    let curve = sweep_training_size(&data, &DEFAULT_SWEEP_SIZES, &cfg).map_err(err)?;
    let acc = |s: usize| curve.iter().find(|p| p.size == s).map(|p| p.accuracy).unwrap();
    let (lo, hi) = (acc(5), acc(100));
    let points = curve
        .iter()
        .map(|p| format!("{}:{:.2}", p.size, p.accuracy))
        .collect::<Vec<_>>()
        .join(" ");
    let detail = format!("accuracy(5) {lo:.3}, accuracy(100) {hi:.3} [{points}]");
    ensure(curve.len() == 20 && hi >= lo && hi >= 0.90, || detail.clone())?;
    Ok(detail)
}

// -------------------------------------------------------------- determinism

fn experiment_bytes() -> Result<Vec<Vec<u8>>, String> {
    let data = benchmark_data(3, &["a", "b", "c"], 12, 81);
    let mut cfg = ExperimentConfig::new(ExperimentKind::Task, Variant::Raw);
    cfg.model = ModelConfig {
        d_model: 16,
        num_heads: 2,
        ffn_dim: 16,
        ..ModelConfig::standard(1, 64)
    };
    cfg.train = TrainConfig {
        epochs: 3,
        train_per_class: 8,
        test_per_class: 4,
        seed: 82,
        ..TrainConfig::default()
    };
    let mut out = Vec::new();
    for m in train_task_models(&data, &cfg).map_err(err)? {
        let mut bytes = Vec::new();
        write_checkpoint(&m.checkpoint, &mut bytes).map_err(err)?;
        out.push(bytes);
        out.push(serde_json::to_vec(&m.report).map_err(err)?);
        out.push(m.history.to_json(&m.id(), &m.checkpoint.model.config, &cfg.train).map_err(err)?.into_bytes());
    }
    Ok(out)
}

fn determinism() -> Result<String, String> {
    let a = experiment_bytes()?;
    let b = experiment_bytes()?;
    ensure(a.len() == 9, || format!("{} artefacts", a.len()))?;
    ensure(a == b, || "artefacts differ between identical runs".into())?;
    let bytes: usize = a.iter().map(Vec::len).sum();
    Ok(format!("3 checkpoints, reports and histories byte-identical ({bytes} bytes)"))
}

// ------------------------------------------------------------------ metrics

fn metric_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    for case in 0..1000 {
        let k = rng.random_range(1..=15);
        let n = rng.random_range(1..=400);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&y| if rng.random_bool(0.6) { y } else { rng.random_range(0..k) })
            .collect();
        let m = confusion_matrix(&preds, &labels, k).map_err(err)?;
        let got = metrics(&m).map_err(err)?;
        for t in 0..k {
            for p in 0..k {
                let count = (0..n).filter(|&i| labels[i] == t && preds[i] == p).count() as u64;
                ensure(m.get(t, p) == count, || format!("case {case}: M[{t},{p}]"))?;
            }
            let predicted = preds.iter().filter(|&&p| p == t).count();
            let hits = (0..n).filter(|&i| preds[i] == t && labels[i] == t).count();
            let want = if predicted == 0 { 0.0 } else { hits as f64 / predicted as f64 };
            ensure(got.precision[t] == want, || format!("case {case}: precision[{t}]"))?;
        }
        let correct = (0..n).filter(|&i| preds[i] == labels[i]).count();
        ensure(got.accuracy == correct as f64 / n as f64, || format!("case {case}: accuracy"))?;
    }
    Ok("1000 random prediction sets match the counting oracle exactly".into())
}
