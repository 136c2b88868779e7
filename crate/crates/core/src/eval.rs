//! Inference, confusion matrices, accuracy / per-class precision, and the
//! report files built from them.
//!
//! Confusion matrices are indexed `[true class][predicted class]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::matrix::Matrix;
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::signal::zscore_apply;

const EVAL_BATCH: usize = 32;

/// Index of the largest value, the lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Predicted class and class probabilities of one sequence.
pub fn predict(model: &Model<f32>, seq: &FeatureSequence) -> Result<(usize, Vec<f64>)> {
    let logits = model.logits(&[&seq.values])?;
    let wide: Vec<f64> = logits[0].iter().map(|&v| f64::from(v)).collect();
    let probs = softmax(&wide);
    Ok((argmax(&probs), probs))
}

/// Predicted classes of many sequences, in input order.
pub fn predict_batch(model: &Model<f32>, seqs: &[&Matrix]) -> Result<Vec<usize>> {
    let chunks: Vec<Vec<usize>> = seqs
        .par_chunks(EVAL_BATCH)
        .map(|chunk| Ok(model.logits(chunk)?.iter().map(|row| argmax(row)).collect()))
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// `K×K` counts, row = true class, column = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if k == 0 {
        return Err(Error::Config("confusion matrix needs at least one class".into()));
    }
    let mut counts = vec![0u64; k * k];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(Error::Dimension(format!("class pair ({y}, {p}) outside 0..{k}")));
        }
        counts[y * k + p] += 1;
    }
    Ok(ConfusionMatrix { classes: k, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `M[k,k]` over column sum `k`; 0 for a class that is never predicted.
    pub precision: Vec<f64>,
}

pub fn metrics(m: &ConfusionMatrix) -> Result<Metrics> {
    let total = m.total();
    if total == 0 {
        return Err(Error::Config("confusion matrix is empty".into()));
    }
    let k = m.classes();
    let diag: u64 = (0..k).map(|i| m.get(i, i)).sum();
    let precision = (0..k)
        .map(|c| {
            let col: u64 = (0..k).map(|r| m.get(r, c)).sum();
            if col == 0 {
                0.0
            } else {
                m.get(c, c) as f64 / col as f64
            }
        })
        .collect();
    Ok(Metrics {
        accuracy: diag as f64 / total as f64,
        precision,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    /// SHA-256 of the model configuration's JSON form.
    pub config_digest: String,
    pub matrix: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub labels: Vec<String>,
}

pub fn config_digest(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("model config serialises");
    hex::encode(Sha256::digest(json))
}

/// Evaluate a model on unnormalised test sequences, applying the
/// checkpoint's normalisation first.
pub fn evaluate_checkpoint(model_id: &str, ckpt: &Checkpoint, test: &[FeatureSequence]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config(format!("{model_id}: empty test set")));
    }
    let k = ckpt.labels.len();
    let inputs: Vec<Matrix> = match &ckpt.norm {
        Some(stats) => test
            .iter()
            .map(|s| zscore_apply(&s.values, stats))
            .collect::<Result<_>>()?,
        None => test.iter().map(|s| s.values.clone()).collect(),
    };
    let refs: Vec<&Matrix> = inputs.iter().collect();
    let preds = predict_batch(&ckpt.model, &refs)?;
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let m = confusion_matrix(&preds, &labels, k)
        .map_err(|e| Error::Dimension(format!("{model_id}: test labels do not match the model: {e}")))?;
    let Metrics { accuracy, precision } = metrics(&m)?;
    Ok(EvalReport {
        model: model_id.to_string(),
        config_digest: config_digest(&ckpt.model.config),
        matrix: m.rows(),
        accuracy,
        precision,
        labels: ckpt.labels.clone(),
    })
}

/// Per-model reports with cross-model averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub reports: Vec<EvalReport>,
    /// Accuracy of each model, keyed by model id.
    pub model_accuracy: BTreeMap<String, f64>,
    pub mean_accuracy: f64,
    /// Precision of each class label averaged over the models that know it.
    pub class_precision: BTreeMap<String, f64>,
}

/// Evaluate each `(model id, checkpoint, test set)` triple and aggregate.
pub fn evaluate_experiment(runs: &[(String, &Checkpoint, &[FeatureSequence])]) -> Result<AggregateReport> {
    let reports = runs
        .iter()
        .map(|(id, ckpt, test)| evaluate_checkpoint(id, ckpt, test))
        .collect::<Result<Vec<_>>>()?;
    aggregate(reports)
}

pub fn aggregate(reports: Vec<EvalReport>) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to aggregate".into()));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &reports {
        if r.labels.len() != r.precision.len() {
            return Err(Error::Dimension(format!("{}: {} labels, {} precisions", r.model, r.labels.len(), r.precision.len())));
        }
        for (label, &p) in r.labels.iter().zip(&r.precision) {
            let e = sums.entry(label.clone()).or_default();
            e.0 += p;
            e.1 += 1;
        }
    }
    let model_accuracy: BTreeMap<String, f64> = reports.iter().map(|r| (r.model.clone(), r.accuracy)).collect();
    if model_accuracy.len() != reports.len() {
        return Err(Error::Duplicate("model id appears twice in the experiment".into()));
    }
    Ok(AggregateReport {
        mean_accuracy: reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64,
        class_precision: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        model_accuracy,
        reports,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Confusion matrix with a header row of predicted labels and a leading
/// column of true labels.
pub fn matrix_csv(report: &EvalReport) -> String {
    let mut out = String::from("true\\predicted");
    for l in &report.labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (l, row) in report.labels.iter().zip(&report.matrix) {
        out.push_str(&csv_field(l));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `kind,key,value` rows of model accuracies, their mean and per-class
/// precision averages.
pub fn aggregate_csv(agg: &AggregateReport) -> String {
    let mut out = String::from("metric,key,value\n");
    for (id, acc) in &agg.model_accuracy {
        let _ = writeln!(out, "accuracy,{},{acc}", csv_field(id));
    }
    let _ = writeln!(out, "mean_accuracy,,{}", agg.mean_accuracy);
    for (label, p) in &agg.class_precision {
        let _ = writeln!(out, "class_precision,{},{p}", csv_field(label));
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Row-normalised heatmap of the confusion matrix.
pub fn heatmap_svg(report: &EvalReport) -> String {
    let k = report.labels.len();
    let cell = 36;
    let margin = 60;
    let size = margin + cell * k + 10;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, xml_escape(&report.model));
    for (r, row) in report.matrix.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (c, &v) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (x, y) = (margin + c * cell, margin + r * cell);
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            );
            let ink = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v}</text>"#,
                x + cell / 2,
                y + cell / 2 + 4
            );
        }
    }
    for (i, l) in report.labels.iter().enumerate() {
        let l = xml_escape(l);
        let mid = margin + i * cell + cell / 2;
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{l}</text>"#, margin - 4, mid + 4);
        let _ = writeln!(out, r#"<text x="{mid}" y="{}" text-anchor="middle">{l}</text>"#, margin - 6);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5, -2.0]), 1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn hand_counted_matrix() {
        let m = confusion_matrix(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(m.rows(), vec![vec![1, 1], vec![0, 1]]);
        let r = metrics(&m).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.precision, vec![1.0, 0.5]);
    }

    #[test]
    fn diagonal_and_uniform() {
        let m = confusion_matrix(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let r = metrics(&m).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, vec![1.0; 3]);
        let k = 4;
        let u = ConfusionMatrix::from_rows(vec![vec![5; k]; k]).unwrap();
        let r = metrics(&u).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.precision, vec![0.25; k]);
    }

    #[test]
    fn errors() {
        assert!(confusion_matrix(&[0, 2], &[0, 1], 2).is_err());
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
        let zero = ConfusionMatrix::from_rows(vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert!(metrics(&zero).is_err());
        let never = ConfusionMatrix::from_rows(vec![vec![2, 0], vec![1, 0]]).unwrap();
        assert_eq!(metrics(&never).unwrap().precision[1], 0.0);
    }

    #[test]
    fn csv_and_svg() {
        let report = EvalReport {
            model: "m".into(),
            config_digest: String::new(),
            matrix: vec![vec![3, 1], vec![0, 4]],
            accuracy: 7.0 / 8.0,
            precision: vec![1.0, 0.8],
            labels: vec!["a".into(), "b,c".into()],
        };
        assert_eq!(matrix_csv(&report), "true\\predicted,a,\"b,c\"\na,3,1\n\"b,c\",0,4\n");
        let svg = heatmap_svg(&report);
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.ends_with("</svg>\n"));
    }
}
