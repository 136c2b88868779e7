use std::collections::BTreeSet;

use haptic_autograd::Tensor;
use haptic_core::dataset::{Dataset, Variant};
use haptic_core::features::FeatureSequence;
use haptic_core::synth::{synth_dataset, SynthConfig};
use haptic_core::trainer::{
    adam_step, plan_experiment, split_dataset, subsample_per_class, sweep_training_size, train, AdamConfig, AdamState,
    ExperimentConfig, ExperimentKind, TrainConfig,
};
use haptic_core::model::ModelConfig;
use haptic_core::{Error, Matrix};

#[test]
fn adam_three_steps_against_scalar_oracle() {
    let cfg = AdamConfig::default();
    let grads = [0.5f64, -2.0, 0.25];
    let (lr, b1, b2, eps) = (0.1, cfg.beta1, cfg.beta2, cfg.eps);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32 + 1));
        let v_hat = v / (1.0 - b2.powi(t as i32 + 1));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }

    let mut params = vec![Tensor::new(vec![1], vec![1.0f32]).unwrap()];
    let mut state = AdamState::new(&params);
    for g in grads {
        let grad = Tensor::new(vec![1], vec![g as f32]).unwrap();
        adam_step(&mut params, &[grad], &mut state, lr, &cfg).unwrap();
    }
    assert_eq!(state.steps(0), 3);
    assert!((f64::from(params[0].data()[0]) - theta).abs() < 1e-6, "{} vs {theta}", params[0].data()[0]);
}

fn synth(users: usize, tasks: &[&str], trials: usize) -> Dataset {
    synth_dataset(&SynthConfig {
        num_users: users,
        tasks: tasks.iter().map(|t| t.to_string()).collect(),
        trials_per_task: trials,
        duration_range: (0.1, 0.15),
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn splits_are_disjoint_and_seeded() {
    let data = synth(2, &["a", "b"], 120);
    let groups = data.groups();
    let s = split_dataset(&groups, 100, 20, 9).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (400, 80));
    let train: BTreeSet<_> = s.train.iter().map(|t| t.key()).collect();
    let test: BTreeSet<_> = s.test.iter().map(|t| t.key()).collect();
    assert_eq!(train.len(), 400);
    assert!(train.is_disjoint(&test));

    let again = split_dataset(&groups, 100, 20, 9).unwrap();
    assert!(s.test.iter().zip(&again.test).all(|(a, b)| a.key() == b.key()));
    let other = split_dataset(&groups, 100, 20, 10).unwrap();
    assert!(s.test.iter().zip(&other.test).any(|(a, b)| a.key() != b.key()));

    let small = synth(2, &["a"], 50);
    match split_dataset(&small.groups(), 100, 20, 9) {
        Err(Error::Insufficient { group, needed, available }) => {
            assert_eq!((group.as_str(), needed, available), ("u01/a", 120, 50));
        }
        other => panic!("{other:?}"),
    }
}

fn seq(label: usize, fill: f32) -> FeatureSequence {
    FeatureSequence {
        values: Matrix::new(4, 13, vec![fill; 52]).unwrap(),
        label,
        source: haptic_core::dataset::TraceKey::new("u", "a", (fill * 100.0) as u32, Variant::Raw),
    }
}

#[test]
fn subsample_draws_per_class() {
    let set: Vec<FeatureSequence> = (0..30).map(|i| seq(i % 3, i as f32 / 100.0)).collect();
    assert_eq!(subsample_per_class(&set, 10, 1).unwrap(), set);
    let sub = subsample_per_class(&set, 4, 1).unwrap();
    assert_eq!(sub.len(), 12);
    for c in 0..3 {
        assert_eq!(sub.iter().filter(|s| s.label == c).count(), 4);
    }
    assert_eq!(sub, subsample_per_class(&set, 4, 1).unwrap());
    assert!(matches!(subsample_per_class(&set, 11, 1), Err(Error::Insufficient { .. })));
}

fn tiny_experiment(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind, Variant::Raw);
    cfg.model = ModelConfig {
        d_model: 8,
        num_heads: 2,
        ffn_dim: 8,
        num_layers: 1,
        seq_len: 8,
        ..cfg.model
    };
    cfg.train = TrainConfig {
        epochs: 1,
        train_per_class: 3,
        test_per_class: 2,
        ..TrainConfig::default()
    };
    cfg
}

#[test]
fn experiment_plans() {
    let data = synth(2, &["a", "b", "c"], 5);
    let jobs = plan_experiment(&data, &tiny_experiment(ExperimentKind::UserId)).unwrap();
    assert_eq!(jobs.len(), 3);
    for job in &jobs {
        assert_eq!(job.labels, ["u01", "u02"]);
        assert_eq!((job.train.len(), job.test.len()), (6, 4));
        assert!(job.train.iter().chain(&job.test).all(|s| s.source.task == job.meta.group));
    }

    let single = synth(2, &["a", "b", "c"], 5);
    let single = Dataset::new(single.into_traces().into_iter().filter(|t| t.key().user == "u02").collect()).unwrap();
    let jobs = plan_experiment(&single, &tiny_experiment(ExperimentKind::Task)).unwrap();
    assert_eq!(jobs.len(), 1);
    assert_eq!(jobs[0].meta.group, "u02");
    assert_eq!(jobs[0].labels, ["a", "b", "c"]);

    // user u02 lacks task c
    let gap = Dataset::new(
        synth(2, &["a", "b", "c"], 5)
            .into_traces()
            .into_iter()
            .filter(|t| !(t.key().user == "u02" && t.key().task == "c"))
            .collect(),
    )
    .unwrap();
    assert!(matches!(
        plan_experiment(&gap, &tiny_experiment(ExperimentKind::UserId)),
        Err(Error::Coverage(_))
    ));
    let mut filtered = tiny_experiment(ExperimentKind::UserId);
    filtered.variant = Variant::Filtered;
    assert!(matches!(plan_experiment(&data, &filtered), Err(Error::Coverage(_))));
}

#[test]
fn sweep_rejects_bad_sizes() {
    let data = synth(2, &["a"], 6);
    let cfg = tiny_experiment(ExperimentKind::UserId);
    assert!(sweep_training_size(&data, &[], &cfg).unwrap_err().is_config());
    assert!(sweep_training_size(&data, &[0, 2], &cfg).unwrap_err().is_config());
    assert!(matches!(sweep_training_size(&data, &[5], &cfg), Err(Error::Insufficient { .. })));
    let points = sweep_training_size(&data, &[1, 3], &cfg).unwrap();
    assert_eq!(points.iter().map(|p| p.size).collect::<Vec<_>>(), [1, 3]);
    assert!(points.iter().all(|p| p.per_model.len() == 1 && (0.0..=1.0).contains(&p.accuracy)));
}

#[test]
fn train_rejects_label_gaps_and_shape_mismatch() {
    let model = ModelConfig {
        input_channels: 13,
        d_model: 8,
        num_heads: 2,
        ffn_dim: 8,
        num_layers: 1,
        num_classes: 3,
        seq_len: 4,
        dropout: 0.0,
        positional_encoding: true,
    };
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let ok: Vec<_> = (0..6).map(|i| seq(i % 3, i as f32 * 0.1)).collect();
    let (_, history) = train(&cfg, &model, &ok).unwrap();
    assert_eq!(history.len(), 2);
    assert!(history.loss.iter().all(|l| l.is_finite()));

    let gap: Vec<_> = (0..6).map(|i| seq(2 * (i % 2), i as f32 * 0.1)).collect();
    assert!(train(&cfg, &model, &gap).unwrap_err().is_config());
    let mut wrong = ok.clone();
    wrong[0].values = Matrix::new(5, 13, vec![0.0; 65]).unwrap();
    assert!(matches!(train(&cfg, &model, &wrong), Err(Error::Dimension(_))));
    assert!(train(&cfg, &model, &[]).is_err());
}
