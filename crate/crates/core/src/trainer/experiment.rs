use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{split_group, Groups};
use super::{train, TrainConfig, TrainHistory};
use crate::dataset::{Dataset, TraceKey, Variant};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::eval::{evaluate_checkpoint, EvalReport};
use crate::features::{pipeline, FeatureSequence, NUM_FEATURES};
use crate::model::{Checkpoint, ModelConfig};
use crate::signal::{zscore_apply, zscore_fit};

/// Training sizes of the learning-curve sweep: 5, 10, …, 100.
pub const DEFAULT_SWEEP_SIZES: [usize; 20] = [5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90, 95, 100];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// One model per task, classifying which user wrote the trace.
    UserId,
    /// One model per user, classifying which task the trace shows.
    Task,
}

impl ExperimentKind {
    pub fn default_seq_len(self) -> usize {
        match self {
            ExperimentKind::UserId => 512,
            ExperimentKind::Task => 64,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::UserId => "user-id",
            ExperimentKind::Task => "task",
        })
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user-id" => Ok(ExperimentKind::UserId),
            "task" => Ok(ExperimentKind::Task),
            other => Err(Error::Config(format!("unknown experiment kind {other:?}"))),
        }
    }
}

/// Experiment settings. `model.num_classes` is filled in per job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub variant: Variant,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, variant: Variant) -> Self {
        ExperimentConfig {
            kind,
            variant,
            model: ModelConfig::standard(1, kind.default_seq_len()),
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config(1).validate()
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_channels: NUM_FEATURES,
            num_classes,
            ..self.model.clone()
        }
    }
}

/// Everything needed to rebuild one model's train/test split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub kind: ExperimentKind,
    pub variant: Variant,
    /// The task (user-id experiment) or user (task experiment) the model covers.
    pub group: String,
    pub model_index: usize,
    pub split_seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seq_len: usize,
}

impl ExperimentMeta {
    pub fn id(&self) -> String {
        format!("{}-{}", self.kind, self.group)
    }
}

/// Unnormalised train and test sequences of one model.
#[derive(Clone, Debug)]
pub struct ExperimentJob {
    pub meta: ExperimentMeta,
    pub labels: Vec<String>,
    pub train: Vec<FeatureSequence>,
    pub test: Vec<FeatureSequence>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    /// Held-out evaluation of the final parameters.
    pub report: EvalReport,
    pub train_keys: Vec<TraceKey>,
    pub test_keys: Vec<TraceKey>,
}

impl TrainedModel {
    pub fn id(&self) -> String {
        self.checkpoint
            .experiment
            .as_ref()
            .map(ExperimentMeta::id)
            .unwrap_or_default()
    }
}

fn features_of(traces: &[&crate::dataset::ForceTrace], labels: &[usize], seq_len: usize) -> Result<Vec<FeatureSequence>> {
    traces
        .par_iter()
        .zip(labels)
        .map(|(t, &label)| pipeline(t, seq_len, None, label).map_err(|e| Error::Coverage(format!("{}: {e}", t.key()))))
        .collect()
}

fn build_job_in(groups: &Groups<'_>, meta: &ExperimentMeta, labels: &[String]) -> Result<ExperimentJob> {
    let (mut train_traces, mut train_labels, mut test_traces, mut test_labels) = (vec![], vec![], vec![], vec![]);
    for (class, label) in labels.iter().enumerate() {
        let (user, task) = match meta.kind {
            ExperimentKind::UserId => (label.as_str(), meta.group.as_str()),
            ExperimentKind::Task => (meta.group.as_str(), label.as_str()),
        };
        let traces = groups
            .get(&(user.to_string(), task.to_string()))
            .ok_or_else(|| Error::Coverage(format!("no {} traces for user {user}, task {task}", meta.variant)))?;
        let (train, test) = split_group(
            user,
            task,
            traces,
            meta.train_per_class,
            meta.test_per_class,
            meta.split_seed,
        )?;
        train_labels.extend(std::iter::repeat_n(class, train.len()));
        test_labels.extend(std::iter::repeat_n(class, test.len()));
        train_traces.extend(train);
        test_traces.extend(test);
    }
    Ok(ExperimentJob {
        meta: meta.clone(),
        labels: labels.to_vec(),
        train: features_of(&train_traces, &train_labels, meta.seq_len)?,
        test: features_of(&test_traces, &test_labels, meta.seq_len)?,
    })
}

/// Rebuild the split of one model from its metadata and class labels.
pub fn build_job(dataset: &Dataset, meta: &ExperimentMeta, labels: &[String]) -> Result<ExperimentJob> {
    let selected = dataset.select(meta.variant);
    build_job_in(&selected.groups(), meta, labels)
}

/// One job per task (user-id) or per user (task), in sorted group order.
pub fn plan_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<ExperimentJob>> {
    cfg.validate()?;
    let selected = dataset.select(cfg.variant);
    if selected.is_empty() {
        return Err(Error::Coverage(format!("dataset has no {} traces", cfg.variant)));
    }
    let (groups, labels) = match cfg.kind {
        ExperimentKind::UserId => (selected.tasks(), selected.users()),
        ExperimentKind::Task => (selected.users(), selected.tasks()),
    };
    let grouped = selected.groups();
    groups
        .iter()
        .enumerate()
        .map(|(i, group)| {
            let meta = ExperimentMeta {
                kind: cfg.kind,
                variant: cfg.variant,
                group: group.clone(),
                model_index: i,
                split_seed: cfg.train.seed,
                train_per_class: cfg.train.train_per_class,
                test_per_class: cfg.train.test_per_class,
                seq_len: cfg.model.seq_len,
            };
            build_job_in(&grouped, &meta, &labels)
        })
        .collect()
}

fn run_parts(
    meta: &ExperimentMeta,
    labels: &[String],
    train_set: &[FeatureSequence],
    test_set: &[FeatureSequence],
    cfg: &ExperimentConfig,
) -> Result<TrainedModel> {
    let model_cfg = cfg.model_config(labels.len());
    let norm = if cfg.train.normalize {
        Some(zscore_fit(train_set.iter().map(|s| &s.values))?)
    } else {
        None
    };
    let normalized: Vec<FeatureSequence>;
    let fit_on = match &norm {
        Some(stats) => {
            normalized = train_set
                .iter()
                .map(|s| {
                    Ok(FeatureSequence {
                        values: zscore_apply(&s.values, stats)?,
                        ..s.clone()
                    })
                })
                .collect::<Result<_>>()?;
            &normalized
        }
        None => train_set,
    };
    let train_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(meta.model_index as u64),
        ..cfg.train.clone()
    };
    let (model, history) = train(&train_cfg, &model_cfg, fit_on)?;
    let checkpoint = Checkpoint {
        model,
        labels: labels.to_vec(),
        norm,
        experiment: Some(meta.clone()),
    };
    let report = evaluate_checkpoint(&meta.id(), &checkpoint, test_set)?;
    Ok(TrainedModel {
        checkpoint,
        history,
        report,
        train_keys: train_set.iter().map(|s| s.source.clone()).collect(),
        test_keys: test_set.iter().map(|s| s.source.clone()).collect(),
    })
}

/// Fit normalisation on the job's training split, train with seed
/// `base + model_index`, and evaluate on the test split.
pub fn run_job(job: &ExperimentJob, cfg: &ExperimentConfig) -> Result<TrainedModel> {
    run_parts(&job.meta, &job.labels, &job.train, &job.test, cfg)
}

fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<TrainedModel>> {
    let jobs = plan_experiment(dataset, cfg)?;
    jobs.par_iter().map(|job| run_job(job, cfg)).collect()
}

/// One user-identification model per task.
pub fn train_user_id_models(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<TrainedModel>> {
    run_experiment(
        dataset,
        &ExperimentConfig {
            kind: ExperimentKind::UserId,
            ..cfg.clone()
        },
    )
}

/// One task-classification model per user.
pub fn train_task_models(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<TrainedModel>> {
    run_experiment(
        dataset,
        &ExperimentConfig {
            kind: ExperimentKind::Task,
            ..cfg.clone()
        },
    )
}

/// Seeded choice of `n` sequences per class, in their original order.
pub fn subsample_per_class(set: &[FeatureSequence], n: usize, seed: u64) -> Result<Vec<FeatureSequence>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in set.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (class, idx) in &by_class {
        if idx.len() < n {
            return Err(Error::Insufficient {
                group: format!("class {class}"),
                needed: n,
                available: idx.len(),
            });
        }
        keep.extend(rand::seq::index::sample(&mut rng, idx.len(), n).into_iter().map(|j| idx[j]));
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| set[i].clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    /// Mean test accuracy over the experiment's models.
    pub accuracy: f64,
    pub per_model: Vec<f64>,
}

/// Learning curve: for each size `s`, train on `s` sequences per class drawn
/// from the split made for the largest size, and test on the fixed test split.
pub fn sweep_training_size(dataset: &Dataset, sizes: &[usize], cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let max = *sizes
        .iter()
        .max()
        .ok_or_else(|| Error::Config("sweep needs at least one size".into()))?;
    if sizes.contains(&0) {
        return Err(Error::Config("sweep sizes must be positive".into()));
    }
    let mut full = cfg.clone();
    full.train.train_per_class = max;
    let jobs = plan_experiment(dataset, &full)?;
    let pairs: Vec<(usize, &ExperimentJob)> = sizes.iter().flat_map(|&s| jobs.iter().map(move |j| (s, j))).collect();
    let accuracies: Vec<f64> = pairs
        .par_iter()
        .map(|&(size, job)| {
            let seed = derive_seed(full.train.seed, &format!("sweep/{}/{size}", job.meta.id()));
            let subset = subsample_per_class(&job.train, size, seed)?;
            Ok(run_parts(&job.meta, &job.labels, &subset, &job.test, &full)?.report.accuracy)
        })
        .collect::<Result<_>>()?;
    Ok(sizes
        .iter()
        .zip(accuracies.chunks(jobs.len()))
        .map(|(&size, per_model)| SweepPoint {
            size,
            accuracy: per_model.iter().sum::<f64>() / per_model.len() as f64,
            per_model: per_model.to_vec(),
        })
        .collect())
}
