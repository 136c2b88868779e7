//! Force-trace records, the `timestamp,fx,fy,fz` CSV schema, and JSON
//! manifests describing a directory of traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CSV_HEADER: [&str; 4] = ["timestamp", "fx", "fy", "fz"];

/// One three-axis force reading. Timestamp in seconds, forces in newtons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub timestamp: f64,
    pub fx: f32,
    pub fy: f32,
    pub fz: f32,
}

impl ForceSample {
    pub fn new(timestamp: f64, fx: f32, fy: f32, fz: f32) -> Self {
        ForceSample { timestamp, fx, fy, fz }
    }

    fn is_finite(&self) -> bool {
        self.timestamp.is_finite() && self.fx.is_finite() && self.fy.is_finite() && self.fz.is_finite()
    }
}

/// Which of the two recorded data types a trace holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Filtered,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Raw => "raw",
            Variant::Filtered => "filtered",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Variant::Raw),
            "filtered" => Ok(Variant::Filtered),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Identity of one trial recording.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceKey {
    pub user: String,
    pub task: String,
    pub trial: u32,
    pub variant: Variant,
}

impl TraceKey {
    pub fn new(user: impl Into<String>, task: impl Into<String>, trial: u32, variant: Variant) -> Self {
        TraceKey {
            user: user.into(),
            task: task.into(),
            trial,
            variant,
        }
    }
}

impl fmt::Display for TraceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.user, self.task, self.trial, self.variant)
    }
}

/// One letter-writing trial: a timestamped force sequence with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceTrace {
    key: TraceKey,
    sample_rate: f64,
    samples: Vec<ForceSample>,
}

impl ForceTrace {
    /// Validates that the trace is non-empty, finite and strictly increasing
    /// in time.
    pub fn new(key: TraceKey, sample_rate: f64, samples: Vec<ForceSample>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample rate {sample_rate} must be positive")));
        }
        if samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        for (row, s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: "non-finite value".into(),
                });
            }
            if row > 0 && s.timestamp <= samples[row - 1].timestamp {
                return Err(Error::Ordering {
                    row,
                    timestamp: s.timestamp,
                });
            }
        }
        Ok(ForceTrace {
            key,
            sample_rate,
            samples,
        })
    }

    pub fn key(&self) -> &TraceKey {
        &self.key
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[ForceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `T×3` matrix of `(fx, fy, fz)`.
    pub fn forces(&self) -> Matrix {
        let data = self.samples.iter().flat_map(|s| [s.fx, s.fy, s.fz]).collect();
        Matrix::new(self.samples.len(), 3, data).expect("three columns per sample")
    }

    /// Same timestamps with replaced forces, relabelled as `variant`.
    pub fn with_forces(&self, forces: &Matrix, variant: Variant) -> Result<ForceTrace> {
        if forces.rows() != self.samples.len() || forces.cols() != 3 {
            return Err(Error::Dimension(format!(
                "expected {}x3 forces, got {}x{}",
                self.samples.len(),
                forces.rows(),
                forces.cols()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(forces.iter_rows())
            .map(|(s, f)| ForceSample::new(s.timestamp, f[0], f[1], f[2]))
            .collect();
        ForceTrace::new(
            TraceKey {
                variant,
                ..self.key.clone()
            },
            self.sample_rate,
            samples,
        )
    }
}

/// Parse a `timestamp,fx,fy,fz` CSV. Rows are numbered from 0, excluding the
/// header.
pub fn parse_trace_csv<R: Read>(input: R, key: TraceKey, sample_rate: f64) -> Result<ForceTrace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Schema(format!(
            "expected header {:?}, found {:?}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(Error::Parse {
                row,
                msg: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let timestamp: f64 = parse_field(&record[0], row, "timestamp")?;
        let fx: f32 = parse_field(&record[1], row, "fx")?;
        let fy: f32 = parse_field(&record[2], row, "fy")?;
        let fz: f32 = parse_field(&record[3], row, "fz")?;
        if let Some(prev) = samples.last().map(|s: &ForceSample| s.timestamp) {
            if timestamp <= prev {
                return Err(Error::Ordering { row, timestamp });
            }
        }
        samples.push(ForceSample::new(timestamp, fx, fy, fz));
    }
    ForceTrace::new(key, sample_rate, samples)
}

fn parse_field<F>(text: &str, row: usize, column: &str) -> Result<F>
where
    F: std::str::FromStr + num_finite::Finite,
{
    let value: F = text.trim().parse().map_err(|_| Error::Parse {
        row,
        msg: format!("{column}: {text:?} is not a number"),
    })?;
    if !value.finite() {
        return Err(Error::Parse {
            row,
            msg: format!("{column}: {text:?} is not finite"),
        });
    }
    Ok(value)
}

mod num_finite {
    pub trait Finite {
        fn finite(&self) -> bool;
    }
    impl Finite for f32 {
        fn finite(&self) -> bool {
            self.is_finite()
        }
    }
    impl Finite for f64 {
        fn finite(&self) -> bool {
            self.is_finite()
        }
    }
}

/// Write a trace as CSV with LF line endings. Values use the shortest
/// representation that parses back to the identical float.
pub fn write_trace_csv<W: Write>(trace: &ForceTrace, out: W) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut out = BufWriter::new(out);
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for s in trace.samples() {
        writeln!(out, "{},{},{},{}", s.timestamp, s.fx, s.fy, s.fz)?;
    }
    out.flush()?;
    Ok(())
}

pub fn trace_to_csv_bytes(trace: &ForceTrace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf)?;
    Ok(buf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub user: String,
    pub task: String,
    pub trial: u32,
    pub variant: Variant,
}

impl ManifestEntry {
    pub fn key(&self) -> TraceKey {
        TraceKey::new(&self.user, &self.task, self.trial, self.variant)
    }
}

/// JSON index of trace files. Relative paths resolve against the manifest's
/// own directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sample_rate: f64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(sample_rate: f64, entries: Vec<ManifestEntry>) -> Result<Self> {
        let manifest = Manifest { sample_rate, entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let key = e.key();
            if !seen.insert(key.clone()) {
                return Err(Error::Duplicate(key.to_string()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        Self::from_json(&text).map_err(|e| e.at(path))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::from(e).at(path))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Immutable collection of traces, ordered by key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    traces: Vec<ForceTrace>,
}

impl Dataset {
    pub fn new(mut traces: Vec<ForceTrace>) -> Result<Self> {
        traces.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = traces.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(Error::Duplicate(w[0].key.to_string()));
        }
        Ok(Dataset { traces })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn traces(&self) -> &[ForceTrace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<ForceTrace> {
        self.traces
    }

    /// Sorted distinct user labels.
    pub fn users(&self) -> Vec<String> {
        self.traces
            .iter()
            .map(|t| t.key.user.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Sorted distinct task labels.
    pub fn tasks(&self) -> Vec<String> {
        self.traces
            .iter()
            .map(|t| t.key.task.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn variants(&self) -> BTreeSet<Variant> {
        self.traces.iter().map(|t| t.key.variant).collect()
    }

    /// Traces of one variant only.
    pub fn select(&self, variant: Variant) -> Dataset {
        Dataset {
            traces: self
                .traces
                .iter()
                .filter(|t| t.key.variant == variant)
                .cloned()
                .collect(),
        }
    }

    /// Traces grouped by `(user, task)`, each group ordered by trial.
    pub fn groups(&self) -> BTreeMap<(String, String), Vec<&ForceTrace>> {
        let mut groups: BTreeMap<_, Vec<&ForceTrace>> = BTreeMap::new();
        for t in &self.traces {
            groups
                .entry((t.key.user.clone(), t.key.task.clone()))
                .or_default()
                .push(t);
        }
        groups
    }
}

/// Load every trace named by `manifest`, resolving relative paths against
/// `base_dir`. The first unreadable or invalid file aborts with its path.
pub fn load_dataset(manifest: &Manifest, base_dir: &Path) -> Result<Dataset> {
    manifest.validate()?;
    let mut traces = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let path = base_dir.join(&entry.path);
        let file = fs::File::open(&path).map_err(|e| Error::from(e).at(&path))?;
        let trace = parse_trace_csv(io::BufReader::new(file), entry.key(), manifest.sample_rate)
            .map_err(|e| e.at(&path))?;
        traces.push(trace);
    }
    Dataset::new(traces)
}

/// Read a manifest file and load the traces it lists.
pub fn load_manifest_dataset(manifest_path: &Path) -> Result<(Manifest, Dataset)> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let dataset = load_dataset(&manifest, base)?;
    Ok((manifest, dataset))
}

/// Relative location of a trace file inside a dataset directory.
pub fn trace_relative_path(key: &TraceKey) -> PathBuf {
    PathBuf::from(key.variant.to_string())
        .join(sanitize(&key.user))
        .join(sanitize(&key.task))
        .join(format!("trial_{:04}.csv", key.trial))
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write every trace of `dataset` under `dir` and return the matching
/// manifest (not yet written).
pub fn save_dataset(dataset: &Dataset, dir: &Path, sample_rate: f64) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(dataset.len());
    for trace in dataset.traces() {
        let rel = trace_relative_path(trace.key());
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::from(e).at(parent))?;
        }
        let file = fs::File::create(&path).map_err(|e| Error::from(e).at(&path))?;
        write_trace_csv(trace, file).map_err(|e| e.at(&path))?;
        let key = trace.key();
        entries.push(ManifestEntry {
            path: rel,
            user: key.user.clone(),
            task: key.task.clone(),
            trial: key.trial,
            variant: key.variant,
        });
    }
    Manifest::new(sample_rate, entries)
}
