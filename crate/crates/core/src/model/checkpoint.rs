//! Checkpoint files: one line of JSON header naming every stored tensor and
//! its shape, then the tensors' little-endian f32 values concatenated in
//! header order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use haptic_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::signal::NormStats;
use crate::trainer::ExperimentMeta;

pub const FORMAT_VERSION: u32 = 1;

const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    /// Class label of each logit index.
    pub labels: Vec<String>,
    pub experiment: Option<ExperimentMeta>,
    pub tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to evaluate it on new traces.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub labels: Vec<String>,
    pub norm: Option<NormStats>,
    pub experiment: Option<ExperimentMeta>,
}

impl Checkpoint {
    fn stored(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> = self
            .model
            .params
            .names()
            .iter()
            .cloned()
            .zip(self.model.params.tensors().iter().cloned())
            .collect();
        if let Some(norm) = &self.norm {
            let c = norm.channels();
            out.push((NORM_MEAN.into(), Tensor::new(vec![c], norm.mean.clone()).expect("1-D")));
            out.push((NORM_STD.into(), Tensor::new(vec![c], norm.std.clone()).expect("1-D")));
        }
        out
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, out: W) -> Result<()> {
    if ckpt.labels.len() != ckpt.model.config.num_classes {
        return Err(Error::Checkpoint(format!(
            "{} labels for {} classes",
            ckpt.labels.len(),
            ckpt.model.config.num_classes
        )));
    }
    let stored = ckpt.stored();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: ckpt.model.config.clone(),
        labels: ckpt.labels.clone(),
        experiment: ckpt.experiment.clone(),
        tensors: stored
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = BufWriter::new(out);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, t) in &stored {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let mut input = BufReader::new(input);
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Checkpoint("missing header line".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
    }
    header.config.validate()?;
    if header.labels.len() != header.config.num_classes {
        return Err(Error::Checkpoint("label count does not match num_classes".into()));
    }
    let expected = header.config.param_shapes();
    let n = expected.len();
    let extras = &header.tensors[n.min(header.tensors.len())..];
    let params_ok = header.tensors.len() >= n
        && header.tensors[..n]
            .iter()
            .zip(&expected)
            .all(|(e, (name, shape))| &e.name == name && &e.shape == shape);
    let c = header.config.input_channels;
    let norm_ok = extras.is_empty()
        || (extras.len() == 2
            && extras[0].name == NORM_MEAN
            && extras[1].name == NORM_STD
            && extras.iter().all(|e| e.shape == [c]));
    if !params_ok || !norm_ok {
        return Err(Error::Checkpoint("tensor list does not match the model configuration".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated data for {}", entry.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
    }
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    let norm = (tensors.len() > n).then(|| NormStats {
        mean: tensors[n].data().to_vec(),
        std: tensors[n + 1].data().to_vec(),
    });
    tensors.truncate(n);
    let names = expected.into_iter().map(|(name, _)| name).collect();
    Ok(Checkpoint {
        model: Model {
            config: header.config,
            params: ModelParams::new(names, tensors)?,
        },
        labels: header.labels,
        norm,
        experiment: header.experiment,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
    write_checkpoint(ckpt, file).map_err(|e| e.at(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| Error::from(e).at(path))?;
    read_checkpoint(file).map_err(|e| e.at(path))
}
