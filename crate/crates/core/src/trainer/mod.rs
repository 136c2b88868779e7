//! Seeded splits, Adam with per-epoch cosine annealing, and the
//! user-identification / task-classification experiments.

mod experiment;
mod optim;
mod split;

use haptic_autograd::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::eval::argmax;
use crate::features::FeatureSequence;
use crate::matrix::Matrix;
use crate::model::{batch_tensor, build_model, cross_entropy, Model, ModelConfig};

pub use experiment::{
    build_job, plan_experiment, run_job, subsample_per_class, sweep_training_size, train_task_models,
    train_user_id_models, ExperimentConfig, ExperimentJob, ExperimentKind, ExperimentMeta, SweepPoint,
    TrainedModel, DEFAULT_SWEEP_SIZES,
};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use split::{split_dataset, Groups, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Z-score features with statistics fitted on the training split.
    pub normalize: bool,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            lr_min: 0.0,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            normalize: true,
            train_per_class: 100,
            test_per_class: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.learning_rate {
            return Err(Error::Config(format!(
                "learning rate {} with floor {} is invalid",
                self.learning_rate, self.lr_min
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("per-class split sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Per-epoch mean training loss, running training accuracy and learning rate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub lr: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// `{model, model_config, train_config, epochs: [{epoch, loss, accuracy, lr}]}`
    pub fn to_json(&self, model_id: &str, model: &ModelConfig, train: &TrainConfig) -> Result<String> {
        let epochs: Vec<serde_json::Value> = (0..self.len())
            .map(|e| {
                serde_json::json!({
                    "epoch": e,
                    "loss": self.loss[e],
                    "accuracy": self.accuracy[e],
                    "lr": self.lr[e],
                })
            })
            .collect();
        let doc = serde_json::json!({
            "model": model_id,
            "model_config": model,
            "train_config": train,
            "epochs": epochs,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

fn check_training_set(model_cfg: &ModelConfig, set: &[FeatureSequence]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let k = model_cfg.num_classes;
    let mut seen = vec![false; k];
    for s in set {
        if s.label >= k {
            return Err(Error::Config(format!("label {} outside 0..{k} ({})", s.label, s.source)));
        }
        if (s.values.rows(), s.values.cols()) != (model_cfg.seq_len, model_cfg.input_channels) {
            return Err(Error::Dimension(format!(
                "{} is {}x{}, model expects {}x{}",
                s.source,
                s.values.rows(),
                s.values.cols(),
                model_cfg.seq_len,
                model_cfg.input_channels
            )));
        }
        seen[s.label] = true;
    }
    if let Some(gap) = seen.iter().position(|&s| !s) {
        return Err(Error::Config(format!("no training sequence has label {gap}")));
    }
    Ok(())
}

/// Train a freshly initialised model on `set`.
///
/// Initialisation uses `cfg.seed`; each epoch reshuffles the set and walks it
/// in batches of `cfg.batch_size`, keeping the final partial batch.
pub fn train(cfg: &TrainConfig, model_cfg: &ModelConfig, set: &[FeatureSequence]) -> Result<(Model<f32>, TrainHistory)> {
    cfg.validate()?;
    model_cfg.validate()?;
    check_training_set(model_cfg, set)?;
    let mut model = build_model(model_cfg, cfg.seed)?;
    let mut state = AdamState::new(model.params.tensors());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout"));
    let adam = cfg.adam();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate, cfg.lr_min)?;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Matrix> = batch.iter().map(|&i| &set[i].values).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| set[i].label).collect();
            let mut g = Graph::new();
            let p = model.bind(&mut g, true)?;
            let x = g.constant(batch_tensor(&inputs)?);
            let logits = model.forward(&mut g, &p, x, Some(&mut dropout_rng))?;
            let loss = cross_entropy(&mut g, logits, &labels)?;
            g.backward(loss)?;
            loss_sum += f64::from(g.value(loss).data()[0]) * batch.len() as f64;
            let k = model_cfg.num_classes;
            correct += g
                .value(logits)
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let grads: Vec<Tensor<f32>> = p
                .all
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            adam_step(model.params.tensors_mut(), &grads, &mut state, lr, &adam)?;
        }
        history.loss.push(loss_sum / set.len() as f64);
        history.accuracy.push(correct as f64 / set.len() as f64);
        history.lr.push(lr);
    }
    Ok((model, history))
}
