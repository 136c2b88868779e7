//! Two-layer transformer encoder classifier over feature sequences.
//!
//! input projection + sinusoidal positions → N × post-norm encoder layers
//! (`x = LN(x + MHSA(x)); x = LN(x + FFN(x))`) → mean over time → linear head.

mod checkpoint;

use haptic_autograd::{grad_check, AutogradError, GradCheckConfig, GradCheckReport, Graph, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;
use crate::matrix::Matrix;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, FORMAT_VERSION};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub seq_len: usize,
    pub dropout: f64,
    /// Add sinusoidal position encodings to the projected input.
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// 256-wide, 16-head, two-layer encoder with a 256-wide feed-forward block.
    pub fn standard(num_classes: usize, seq_len: usize) -> Self {
        ModelConfig {
            input_channels: NUM_FEATURES,
            d_model: 256,
            num_heads: 16,
            ffn_dim: 256,
            num_layers: 2,
            num_classes,
            seq_len,
            dropout: 0.0,
            positional_encoding: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("num_layers", self.num_layers),
            ("num_classes", self.num_classes),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.num_heads
            )));
        }
        if self.positional_encoding && self.d_model % 2 != 0 {
            return Err(Error::Config(format!("d_model {} must be even for positional encoding", self.d_model)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Sequence lengths other than 64 and 512 are allowed but not the
    /// published configuration.
    pub fn is_standard_seq_len(&self) -> bool {
        matches!(self.seq_len, 64 | 512)
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c, d, f, k) = (self.input_channels, self.d_model, self.ffn_dim, self.num_classes);
        let mut out = vec![
            ("input.weight".to_string(), vec![c, d]),
            ("input.bias".to_string(), vec![d]),
        ];
        for l in 0..self.num_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("attn.w_q"), vec![d, d]),
                (p("attn.w_k"), vec![d, d]),
                (p("attn.w_v"), vec![d, d]),
                (p("attn.w_o"), vec![d, d]),
                (p("norm1.gamma"), vec![d]),
                (p("norm1.beta"), vec![d]),
                (p("ffn.w1"), vec![d, f]),
                (p("ffn.b1"), vec![f]),
                (p("ffn.w2"), vec![f, d]),
                (p("ffn.b2"), vec![d]),
                (p("norm2.gamma"), vec![d]),
                (p("norm2.beta"), vec![d]),
            ]);
        }
        out.push(("head.weight".to_string(), vec![d, k]));
        out.push(("head.bias".to_string(), vec![k]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Named parameter tensors in [`ModelConfig::param_shapes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Dimension(format!("{} names for {} tensors", names.len(), tensors.len())));
        }
        Ok(ModelParams { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

/// Deterministic initialisation: linear weights uniform in
/// `±1/√fan_in`, biases and betas zero, gammas one.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape) in cfg.param_shapes() {
        let tensor = if name.ends_with(".gamma") {
            Tensor::ones(&shape)
        } else if shape.len() == 1 {
            Tensor::zeros(&shape)
        } else {
            let bound = 1.0 / (shape[0] as f64).sqrt();
            Tensor::uniform(&shape, bound, &mut rng)
        };
        names.push(name);
        tensors.push(tensor);
    }
    Ok(Model {
        config: cfg.clone(),
        params: ModelParams::new(names, tensors)?,
    })
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(…)`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Result<Tensor<T>> {
    if len == 0 || d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs len ≥ 1 and even d, got ({len}, {d})")));
    }
    let mut data = vec![T::zero(); len * d];
    for p in 0..len {
        for i in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[p * d + 2 * i] = T::from_f64_lossy(angle.sin());
            data[p * d + 2 * i + 1] = T::from_f64_lossy(angle.cos());
        }
    }
    Ok(Tensor::new(vec![len, d], data)?)
}

/// Graph handles of one encoder layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub norm1: (Var, Var),
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub norm2: (Var, Var),
}

/// Every model parameter registered on a graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub all: Vec<Var>,
    pub input: (Var, Var),
    pub layers: Vec<LayerVars>,
    pub head: (Var, Var),
}

impl BoundParams {
    /// Index `all` by the canonical parameter order of `cfg`.
    pub fn from_vars(cfg: &ModelConfig, all: Vec<Var>) -> Result<Self> {
        let expected = 4 + 12 * cfg.num_layers;
        if all.len() != expected {
            return Err(Error::Dimension(format!("{} parameter handles, expected {expected}", all.len())));
        }
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let v = &all[2 + 12 * l..2 + 12 * (l + 1)];
                LayerVars {
                    w_q: v[0],
                    w_k: v[1],
                    w_v: v[2],
                    w_o: v[3],
                    norm1: (v[4], v[5]),
                    w1: v[6],
                    b1: v[7],
                    w2: v[8],
                    b2: v[9],
                    norm2: (v[10], v[11]),
                }
            })
            .collect();
        let n = all.len();
        Ok(BoundParams {
            input: (all[0], all[1]),
            head: (all[n - 2], all[n - 1]),
            layers,
            all,
        })
    }
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Register every parameter on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<BoundParams> {
        let all = self
            .params
            .tensors()
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect();
        BoundParams::from_vars(&self.config, all)
    }

    /// Logits `B×K` for a `B×L×C` input.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        input: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let shape = g.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != cfg.input_channels {
            return Err(Error::Dimension(format!(
                "input shape {shape:?} does not match [B, L, {}]",
                cfg.input_channels
            )));
        }
        let len = shape[1];
        let mut x = g.matmul(input, p.input.0)?;
        x = g.add(x, p.input.1)?;
        if cfg.positional_encoding {
            let pe = g.constant(positional_encoding(len, cfg.d_model)?);
            x = g.add(x, pe)?;
        }
        for layer in &p.layers {
            let attn = mhsa(g, x, layer, cfg.num_heads)?;
            let attn = dropout(g, attn, cfg.dropout, rng.as_deref_mut())?;
            let res = g.add(x, attn)?;
            x = g.layer_norm(res, layer.norm1.0, layer.norm1.1, LAYER_NORM_EPS)?;
            let ff = ffn(g, x, layer)?;
            let ff = dropout(g, ff, cfg.dropout, rng.as_deref_mut())?;
            let res = g.add(x, ff)?;
            x = g.layer_norm(res, layer.norm2.0, layer.norm2.1, LAYER_NORM_EPS)?;
        }
        let pooled = g.mean(x, 1)?;
        let logits = g.matmul(pooled, p.head.0)?;
        Ok(g.add(logits, p.head.1)?)
    }

    /// Logits for a batch of `L×C` sequences, without recording gradients.
    pub fn logits(&self, batch: &[&Matrix]) -> Result<Vec<Vec<T>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false)?;
        let input = g.constant(batch_tensor(batch)?);
        let logits = self.forward(&mut g, &p, input, None)?;
        let k = self.config.num_classes;
        Ok(g.value(logits).data().chunks(k).map(<[T]>::to_vec).collect())
    }
}

fn dropout<T: Scalar>(g: &mut Graph<T>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => Ok(g.dropout(x, rate, rng)?),
        _ => Ok(x),
    }
}

/// Stack equally shaped sequences into a `B×L×C` tensor.
pub fn batch_tensor<T: Scalar>(batch: &[&Matrix]) -> Result<Tensor<T>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Dimension("empty batch".into()))?;
    let (l, c) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(batch.len() * l * c);
    for m in batch {
        if (m.rows(), m.cols()) != (l, c) {
            return Err(Error::Dimension(format!(
                "batch mixes {l}x{c} and {}x{} sequences",
                m.rows(),
                m.cols()
            )));
        }
        data.extend(m.data().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
    }
    Ok(Tensor::new(vec![batch.len(), l, c], data)?)
}

/// Multi-head self-attention over `B×L×d`, without masking:
/// `softmax(QKᵀ/√d_h)V` per head, heads concatenated, then `W_O`.
pub fn mhsa<T: Scalar>(g: &mut Graph<T>, x: Var, layer: &LayerVars, heads: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || heads == 0 || shape[2] % heads != 0 {
        return Err(Error::Dimension(format!("cannot split {shape:?} into {heads} heads")));
    }
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    let dh = d / heads;
    let split = |g: &mut Graph<T>, w: Var| -> Result<Var> {
        let y = g.matmul(x, w)?;
        let y = g.reshape(y, &[b, l, heads, dh])?;
        Ok(g.transpose(y, &[0, 2, 1, 3])?)
    };
    let q = split(g, layer.w_q)?;
    let k = split(g, layer.w_k)?;
    let v = split(g, layer.w_v)?;
    let kt = g.transpose(k, &[0, 1, 3, 2])?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::from_f64_lossy(1.0 / (dh as f64).sqrt()))?;
    let weights = g.softmax(scores)?;
    let ctx = g.matmul(weights, v)?;
    let ctx = g.transpose(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, l, d])?;
    Ok(g.matmul(ctx, layer.w_o)?)
}

/// Position-wise `W2·relu(W1·x + b1) + b2`.
pub fn ffn<T: Scalar>(g: &mut Graph<T>, x: Var, layer: &LayerVars) -> Result<Var> {
    let h = g.matmul(x, layer.w1)?;
    let h = g.add(h, layer.b1)?;
    let h = g.relu(h)?;
    let y = g.matmul(h, layer.w2)?;
    Ok(g.add(y, layer.b2)?)
}

/// Mean negative log-likelihood through log-sum-exp.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    Ok(g.cross_entropy(logits, labels)?)
}

/// Finite-difference check of the full model's parameter gradients in f64,
/// with cross-entropy over a random `batch × seq_len` input and random labels.
pub fn gradcheck_model(cfg: &ModelConfig, batch: usize, check: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    if batch == 0 {
        return Err(Error::Config("gradcheck batch must be positive".into()));
    }
    let model = build_model(cfg, check.seed)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed ^ 0x5eed);
    let shape = [batch, cfg.seq_len, cfg.input_channels];
    let input = Tensor::<f64>::uniform(&shape, 1.0, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..cfg.num_classes)).collect();
    let report = grad_check(
        model.params.tensors(),
        |g, vars| {
            let wrap = |e: Error| AutogradError::InvalidArgument {
                op: "model",
                msg: e.to_string(),
            };
            let p = BoundParams::from_vars(cfg, vars.to_vec()).map_err(wrap)?;
            let x = g.constant(input.clone());
            let logits = model.forward(g, &p, x, None).map_err(wrap)?;
            g.cross_entropy(logits, &labels)
        },
        check,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(k: usize) -> ModelConfig {
        ModelConfig {
            input_channels: 13,
            d_model: 8,
            num_heads: 2,
            ffn_dim: 8,
            num_layers: 2,
            num_classes: k,
            seq_len: 5,
            dropout: 0.0,
            positional_encoding: true,
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a = build_model(&tiny(3), 9).unwrap();
        let b = build_model(&tiny(3), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_model(&tiny(3), 10).unwrap());
    }

    #[test]
    fn init_ranges() {
        let m = build_model(&ModelConfig::standard(7, 64), 1).unwrap();
        for (name, t) in m.params.names().iter().zip(m.params.tensors()) {
            if name.ends_with(".gamma") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else if t.rank() == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0));
            } else {
                let bound = 1.0 / (t.shape()[0] as f32).sqrt();
                assert!(t.data().iter().all(|&v| v.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn standard_config_head_dim() {
        let cfg = ModelConfig::standard(15, 512);
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim(), 16);
        let bad = ModelConfig { d_model: 250, ..cfg };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(matches!(build_model(&bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(10, 8).unwrap();
        for i in 0..4 {
            assert_eq!(pe.data()[2 * i], 0.0);
            assert_eq!(pe.data()[2 * i + 1], 1.0);
        }
        assert!((pe.data()[8] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.data()[8] - 0.8415).abs() < 1e-4);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        assert!(matches!(positional_encoding::<f64>(4, 7), Err(Error::Config(_))));
    }

    #[test]
    fn forward_shape() {
        let m = build_model(&tiny(4), 0).unwrap();
        let seqs: Vec<Matrix> = (0..3)
            .map(|s| Matrix::new(5, 13, (0..65).map(|i| ((i + s) as f32 * 0.1).sin()).collect()).unwrap())
            .collect();
        let refs: Vec<&Matrix> = seqs.iter().collect();
        let logits = m.logits(&refs).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|r| r.len() == 4));
        let wrong = Matrix::zeros(5, 12);
        assert!(matches!(m.logits(&[&wrong]), Err(Error::Dimension(_))));
    }
}
