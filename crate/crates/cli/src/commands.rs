use std::fmt;
use std::fs;
use std::path::Path;

use haptic_autograd::{grad_check, Fault, GradCheckConfig, Tensor};
use haptic_core::dataset::{load_manifest_dataset, save_dataset, Dataset, Variant};
use haptic_core::eval::{aggregate, aggregate_csv, evaluate_checkpoint, heatmap_svg, matrix_csv, EvalReport};
use haptic_core::model::{gradcheck_model, load_checkpoint, save_checkpoint};
use haptic_core::signal::ema_filter;
use haptic_core::synth::{synth_dataset, SynthConfig, LETTER_TASKS};
use haptic_core::trainer::{
    build_job, plan_experiment, run_job, sweep_training_size, ExperimentConfig, DEFAULT_SWEEP_SIZES,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{EvalArgs, FilterArgs, GradcheckArgs, SweepArgs, SynthArgs, TrainArgs};

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Gradient check out of tolerance.
    Check(String),
    /// Bad flags, invalid configuration or unwritable output.
    Usage(String),
    /// Unreadable or inconsistent data, missing checkpoints.
    Data(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Check(m) | CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<haptic_core::Error> for CliError {
    fn from(e: haptic_core::Error) -> Self {
        if e.is_config() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Refuse to replace `path` unless forced.
fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serialises")
}

/// Output write failures are the caller's fault; everything else is data.
fn saving(e: haptic_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn synth(a: &SynthArgs, root: &Path) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| root.join("data"));
    let tasks: Vec<String> = (0..a.tasks)
        .map(|i| LETTER_TASKS.get(i).map_or_else(|| format!("t{:02}", i + 1), |s| s.to_string()))
        .collect();
    let cfg = SynthConfig {
        num_users: a.users,
        tasks,
        trials_per_task: a.trials,
        seed: a.seed,
        duration_range: a.duration,
        ..SynthConfig::default()
    };
    let data = synth_dataset(&cfg)?;
    let manifest_path = out.join("manifest.json");
    guard(&manifest_path, a.force)?;
    make_dir(&out)?;
    let manifest = save_dataset(&data, &out, cfg.sample_rate).map_err(saving)?;
    manifest.write(&manifest_path).map_err(saving)?;
    println!(
        "{} traces ({} users x {} tasks x {} trials) -> {}",
        manifest.len(),
        a.users,
        a.tasks,
        a.trials,
        manifest_path.display()
    );
    Ok(())
}

pub fn filter(a: &FilterArgs) -> Result<()> {
    if !(a.alpha > 0.0 && a.alpha <= 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1], got {}", a.alpha)));
    }
    let (manifest, data) = load_manifest_dataset(&a.manifest)?;
    let out = match &a.out {
        Some(dir) => dir.clone(),
        None => a.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let manifest_path = out.join("manifest-filtered.json");
    guard(&manifest_path, a.force)?;
    let raw = data.select(Variant::Raw);
    if raw.is_empty() {
        return Err(CliError::Data(format!("{} lists no raw traces", a.manifest.display())));
    }
    let filtered = raw
        .traces()
        .par_iter()
        .map(|t| t.with_forces(&ema_filter(&t.forces(), a.alpha)?, Variant::Filtered))
        .collect::<haptic_core::Result<Vec<_>>>()?;
    let filtered = Dataset::new(filtered)?;
    make_dir(&out)?;
    let written = save_dataset(&filtered, &out, manifest.sample_rate).map_err(saving)?;
    written.write(&manifest_path).map_err(saving)?;
    println!("{} traces filtered (alpha {}) -> {}", written.len(), a.alpha, manifest_path.display());
    Ok(())
}

/// Index written next to the checkpoints of one experiment.
#[derive(Serialize, Deserialize)]
struct ExperimentIndex {
    config: ExperimentConfig,
    models: Vec<String>,
}

const INDEX_FILE: &str = "experiment.json";

pub fn train_experiment(a: &TrainArgs, root: &Path) -> Result<()> {
    let cfg = a.exp.config();
    cfg.validate()?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("{}-{}", cfg.kind, cfg.variant)));
    guard(&out.join(INDEX_FILE), a.force)?;
    let (_, data) = load_manifest_dataset(&a.exp.manifest)?;
    let jobs = plan_experiment(&data, &cfg)?;
    make_dir(&out)?;
    let trained = jobs
        .par_iter()
        .map(|job| run_job(job, &cfg))
        .collect::<haptic_core::Result<Vec<_>>>()?;
    let mut ids = Vec::new();
    for t in &trained {
        let id = t.id();
        save_checkpoint(&t.checkpoint, &out.join(format!("{id}.ckpt"))).map_err(saving)?;
        let history = t
            .history
            .to_json(&id, &t.checkpoint.model.config, &cfg.train)
            .map_err(CliError::from)?;
        write(&out.join(format!("{id}.history.json")), history)?;
        write(&out.join(format!("{id}.report.json")), to_json(&t.report))?;
        println!("{id}: test accuracy {:.4}", t.report.accuracy);
        ids.push(id);
    }
    let mean = trained.iter().map(|t| t.report.accuracy).sum::<f64>() / trained.len() as f64;
    println!("{} models, mean test accuracy {mean:.4} -> {}", trained.len(), out.display());
    write(&out.join(INDEX_FILE), to_json(&ExperimentIndex { config: cfg, models: ids }))
}

pub fn eval_experiment(a: &EvalArgs) -> Result<()> {
    let index_path = a.checkpoints.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", index_path.display())))?;
    let index: ExperimentIndex = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", index_path.display())))?;
    let out = a.out.clone().unwrap_or_else(|| a.checkpoints.join("reports"));
    guard(&out.join("aggregate.json"), a.force)?;
    for id in &index.models {
        let path = a.checkpoints.join(format!("{id}.ckpt"));
        if !path.is_file() {
            return Err(CliError::Data(format!("missing checkpoint for model {id}: {}", path.display())));
        }
    }
    let (_, data) = load_manifest_dataset(&a.manifest)?;
    let reports = index
        .models
        .par_iter()
        .map(|id| -> Result<EvalReport> {
            let ckpt = load_checkpoint(&a.checkpoints.join(format!("{id}.ckpt")))?;
            let meta = ckpt
                .experiment
                .as_ref()
                .ok_or_else(|| CliError::Data(format!("checkpoint {id} carries no experiment metadata")))?;
            let job = build_job(&data, meta, &ckpt.labels)?;
            Ok(evaluate_checkpoint(id, &ckpt, &job.test)?)
        })
        .collect::<Result<Vec<_>>>()?;
    make_dir(&out)?;
    for r in &reports {
        write(&out.join(format!("{}.json", r.model)), to_json(r))?;
        write(&out.join(format!("{}.csv", r.model)), matrix_csv(r))?;
        write(&out.join(format!("{}.svg", r.model)), heatmap_svg(r))?;
        println!("{}: accuracy {:.4}", r.model, r.accuracy);
    }
    let agg = aggregate(reports)?;
    write(&out.join("aggregate.csv"), aggregate_csv(&agg))?;
    write(&out.join("aggregate.json"), to_json(&agg))?;
    println!("mean accuracy {:.4} -> {}", agg.mean_accuracy, out.display());
    Ok(())
}

pub fn sweep(a: &SweepArgs, root: &Path) -> Result<()> {
    let mut cfg = a.exp.config();
    let sizes: Vec<usize> = if a.sizes.is_empty() {
        DEFAULT_SWEEP_SIZES.to_vec()
    } else {
        a.sizes.clone()
    };
    // the test split is drawn once, after the largest training size
    if let Some(&max) = sizes.iter().max() {
        cfg.train.train_per_class = max;
    }
    cfg.validate()?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("sweep-{}-{}.csv", cfg.kind, cfg.variant)));
    guard(&out, a.force)?;
    let (_, data) = load_manifest_dataset(&a.exp.manifest)?;
    let points = sweep_training_size(&data, &sizes, &cfg)?;
    let mut csv = String::from("size,accuracy\n");
    for p in &points {
        csv.push_str(&format!("{},{}\n", p.size, p.accuracy));
        println!("{:>4}: {:.4}", p.size, p.accuracy);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write(&out, csv)
}

/// `Σθ²` through the matmul path. Central differences of a quadratic carry no
/// truncation error, so a wide step keeps roundoff out of the comparison.
fn quadratic_self_test() -> Result<f64> {
    let theta = Tensor::new(vec![6], vec![0.3, -1.2, 2.0, 0.01, -0.5, 4.0]).expect("static shape");
    let report = grad_check(
        &[theta],
        |g, v| {
            let row = g.reshape(v[0], &[1, 6])?;
            let col = g.reshape(v[0], &[6, 1])?;
            let dot = g.matmul(row, col)?;
            g.sum(dot)
        },
        &GradCheckConfig {
            eps: 1e-2,
            ..GradCheckConfig::default()
        },
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(report.max_rel_error)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    if !(a.eps > 0.0 && a.tol > 0.0) || a.coords == 0 {
        return Err(CliError::Usage("--eps, --tol and --coords must be positive".into()));
    }
    let quad = quadratic_self_test()?;
    println!("quadratic self-test: max relative error {quad:.3e}");
    if quad >= 1e-9 {
        return Err(CliError::Check(format!("quadratic self-test error {quad:.3e} ≥ 1e-9")));
    }
    let model = a.model();
    let check = GradCheckConfig {
        eps: a.eps,
        coordinates: a.coords,
        seed: a.seed,
        fault: a.inject_fault.then_some(Fault::ReluPassThrough),
    };
    let report = gradcheck_model(&model, a.batch, &check)?;
    let worst = report
        .worst
        .as_ref()
        .map(|c| format!(" (tensor {} index {}: analytic {:.6e}, numeric {:.6e})", c.tensor, c.index, c.analytic, c.numeric))
        .unwrap_or_default();
    println!(
        "model: {} coordinates checked, {} skipped at ReLU kinks, max relative error {:.3e}{worst}",
        report.checked, report.skipped_kinks, report.max_rel_error
    );
    if report.checked == 0 {
        return Err(CliError::Check("no coordinate could be checked".into()));
    }
    if report.max_rel_error >= a.tol {
        return Err(CliError::Check(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, a.tol
        )));
    }
    println!("PASS");
    Ok(())
}
