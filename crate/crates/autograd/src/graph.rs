use rand::Rng;

use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, used as negative controls for
/// gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU passes the upstream gradient through unmasked.
    ReluPassThrough,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    Relu {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Mean {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum {
        a: Var,
    },
    Transpose {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Tape of tensor operations.
///
/// Nodes are appended in creation order, which is a topological order, so
/// [`Graph::backward`] visits each node exactly once by walking the tape
/// backwards.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    track_kinks: bool,
    kink_signature: u64,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            track_kinks: false,
            kink_signature: 0xcbf2_9ce4_8422_2325,
            fault: None,
        }
    }

    /// Record a hash of every ReLU input sign pattern, see
    /// [`Graph::kink_signature`].
    pub fn with_kink_tracking(mut self) -> Self {
        self.track_kinks = true;
        self
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    /// Hash of the on/off pattern of every ReLU evaluated so far. Two
    /// evaluations with equal signatures took the same linear piece of every
    /// ReLU.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, available after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Matrix product over the last two axes.
    ///
    /// `a` is `[..., m, k]`. `b` is either a plain `[k, n]` matrix shared by
    /// every leading index of `a`, or `[..., k, n]` with the same leading
    /// dimensions as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(AutogradError::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if k != kb || (!shared_rhs && lead != &sb[..sb.len() - 2]) {
            return Err(AutogradError::shape("matmul", &sa, &sb));
        }
        let batch: usize = lead.iter().product();
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if shared_rhs {
                T::gemm(batch * m, k, n, av, false, bv, false, &mut out, false);
            } else {
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        false,
                        &bv[i * k * n..(i + 1) * k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            rg,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
        ))
    }

    /// Elementwise sum. When the shapes differ, the smaller operand's shape
    /// must be a suffix of the larger one and it is tiled over the leading
    /// dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (big, small) = if sb.len() > sa.len() { (b, a) } else { (a, b) };
        let (sbig, ssmall) = (self.shape(big).to_vec(), self.shape(small).to_vec());
        if !sbig.ends_with(&ssmall) {
            return Err(AutogradError::shape("add", &sa, &sb));
        }
        let bv = self.value(big).data();
        let sv = self.value(small).data();
        let tile = sv.len().max(1);
        let out: Vec<T> = bv
            .iter()
            .enumerate()
            .map(|(i, &x)| x + sv[i % tile])
            .collect();
        let rg = self.any_grad(&[a, b]);
        let value = Tensor::new(sbig, out)?;
        Ok(self.push(value, rg, Op::Add { a: big, b: small }))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let x = self.value(a);
        let out = x.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, rg, Op::Scale { a, factor }))
    }

    /// Alias of [`Graph::scale`].
    pub fn mul_scalar(&mut self, a: Var, factor: T) -> Result<Var> {
        self.scale(a, factor)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out: Vec<T> = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let shape = x.shape().to_vec();
        if self.track_kinks {
            let mut h = self.kink_signature;
            for &v in x.data() {
                h ^= u64::from(v > T::zero());
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
            self.kink_signature = h;
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Relu { a }))
    }

    /// Numerically stabilised softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| AutogradError::invalid("softmax", "rank-0 input"))?;
        let mut out = x.data().to_vec();
        if cols > 0 {
            for row in out.chunks_mut(cols) {
                softmax_row(row);
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Softmax { a }))
    }

    /// Layer normalisation over the last axis with affine `gamma`/`beta` of
    /// that axis' length. Uses the population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx
            .last()
            .ok_or_else(|| AutogradError::invalid("layer_norm", "rank-0 input"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(AutogradError::shape("layer_norm", &sx, self.shape(p)));
            }
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(d).expect("dimension fits");
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = if d == 0 { 0 } else { xv.len() / d };
        let mut normalized = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row
                .iter()
                .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
                / n;
            let rstd = T::one() / (var + eps).sqrt();
            inv_std[r] = rstd;
            for j in 0..d {
                let h = (row[j] - mean) * rstd;
                normalized[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(sx, out)?,
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Mean over one axis, which is removed from the output shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(AutogradError::invalid(
                "mean",
                format!("axis {axis} invalid for shape {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        let scale = T::one() / T::from_usize(len).expect("dimension fits");
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
            dst.iter_mut().for_each(|v| *v = *v * scale);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            rg,
            Op::Mean {
                a,
                outer,
                len,
                inner,
            },
        ))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |s, &v| s + v);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(total), rg, Op::Sum { a }))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn transpose(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(AutogradError::invalid(
                "transpose",
                format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            ));
        }
        let (out_shape, out) = permute(self.value(a).data(), &shape, perm);
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            rg,
            Op::Transpose {
                a,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, rg, Op::Reshape { a }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`,
    /// computed through log-sum-exp. `logits` is `[batch, classes]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(AutogradError::shape("cross_entropy", &shape, &[labels.len()]));
        }
        let classes = shape[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(AutogradError::LabelOutOfRange { label, classes });
        }
        let xv = self.value(logits).data();
        let mut probs = xv.to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln();
            total = total + (lse - row[label]);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let loss = total / T::from_usize(labels.len()).expect("batch fits");
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Inverted dropout. `p == 0` returns `a` unchanged without recording a node.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutogradError::invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let x = self.value(a);
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = x.shape().to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Dropout { a, mask }))
    }

    /// Populate gradients of `loss` with respect to every node that
    /// requires one. Gradients accumulate across repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &mut self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(AutogradError::NonScalarLoss(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Ok(());
        }
        accumulate(&mut node.grad, vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_backward(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut self.nodes[v.0].grad, g);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if self.wants(a) {
                    let mut ga = vec![T::zero(); batch * m * k];
                    if shared_rhs {
                        T::gemm(batch * m, n, k, g, false, bv, true, &mut ga, false);
                    } else {
                        for s in 0..batch {
                            T::gemm(
                                m,
                                n,
                                k,
                                &g[s * m * n..(s + 1) * m * n],
                                false,
                                &bv[s * k * n..(s + 1) * k * n],
                                true,
                                &mut ga[s * m * k..(s + 1) * m * k],
                                false,
                            );
                        }
                    }
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let gb = if shared_rhs {
                        let mut gb = vec![T::zero(); k * n];
                        T::gemm(k, batch * m, n, av, true, g, false, &mut gb, false);
                        gb
                    } else {
                        let mut gb = vec![T::zero(); batch * k * n];
                        for s in 0..batch {
                            T::gemm(
                                k,
                                m,
                                n,
                                &av[s * m * k..(s + 1) * m * k],
                                true,
                                &g[s * m * n..(s + 1) * m * n],
                                false,
                                &mut gb[s * k * n..(s + 1) * k * n],
                                false,
                            );
                        }
                        gb
                    };
                    out.push((b, gb));
                }
            }
            &Op::Add { a, b } => {
                if self.wants(a) {
                    out.push((a, g.to_vec()));
                }
                if self.wants(b) {
                    let tile = self.value(b).numel().max(1);
                    let mut gb = vec![T::zero(); tile];
                    for chunk in g.chunks(tile) {
                        for (d, &s) in gb.iter_mut().zip(chunk) {
                            *d = *d + s;
                        }
                    }
                    out.push((b, gb));
                }
            }
            &Op::Scale { a, factor } => {
                out.push((a, g.iter().map(|&v| v * factor).collect()));
            }
            &Op::Relu { a } => {
                let x = self.value(a).data();
                let ga = match self.fault {
                    Some(Fault::ReluPassThrough) => g.to_vec(),
                    None => g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect(),
                };
                out.push((a, ga));
            }
            &Op::Softmax { a } => {
                let y = node.value.data();
                let cols = *node.value.shape().last().expect("rank checked");
                let mut ga = vec![T::zero(); y.len()];
                for ((dst, yr), gr) in ga.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&p, &q)| s + p * q);
                    for ((d, &p), &q) in dst.iter_mut().zip(yr).zip(gr) {
                        *d = p * (q - dot);
                    }
                }
                out.push((a, ga));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                let n = T::from_usize(d).expect("dimension fits");
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); g.len()];
                    for (r, &rstd) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &normalized[r * d..(r + 1) * d];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            gx[r * d + j] = rstd / n * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    out.push((*x, gx));
                }
                if self.wants(*gamma) {
                    let mut gg = vec![T::zero(); d];
                    for (gr, hr) in g.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * hr[j];
                        }
                    }
                    out.push((*gamma, gg));
                }
                if self.wants(*beta) {
                    let mut gb = vec![T::zero(); d];
                    for gr in g.chunks(d) {
                        for j in 0..d {
                            gb[j] = gb[j] + gr[j];
                        }
                    }
                    out.push((*beta, gb));
                }
            }
            &Op::Mean {
                a,
                outer,
                len,
                inner,
            } => {
                let scale = T::one() / T::from_usize(len).expect("dimension fits");
                let mut ga = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let dst = &mut ga[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
                out.push((a, ga));
            }
            &Op::Sum { a } => {
                out.push((a, vec![g[0]; self.value(a).numel()]));
            }
            Op::Transpose { a, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (_, ga) = permute(g, node.value.shape(), &inverse);
                out.push((*a, ga));
            }
            &Op::Reshape { a } => {
                out.push((a, g.to_vec()));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = probs.len() / labels.len();
                let scale = g[0] / T::from_usize(labels.len()).expect("batch fits");
                let mut gl = probs.clone();
                for (row, &label) in gl.chunks_mut(classes).zip(labels) {
                    row[label] = row[label] - T::one();
                    row.iter_mut().for_each(|v| *v = *v * scale);
                }
                out.push((*logits, gl));
            }
            Op::Dropout { a, mask } => {
                out.push((*a, g.iter().zip(mask).map(|(&x, &m)| x * m).collect()));
            }
        }
        out
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(d, s)| *d = *d + s),
        None => *slot = Some(g),
    }
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / total);
}

/// Copy `data` of `shape` into the axis order given by `perm`.
fn permute<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    // stride in the input of each output axis
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return (out_shape, out);
    }
    if rank == 0 {
        out.push(data[0]);
        return (out_shape, out);
    }
    let inner_len = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut index = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        let mut off = offset;
        for _ in 0..inner_len {
            out.push(data[off]);
            off += inner_stride;
        }
        // advance the odometer over all axes but the innermost
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return (out_shape, out);
            }
            axis -= 1;
            index[axis] += 1;
            offset += strides[axis];
            if index[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * index[axis];
            index[axis] = 0;
        }
    }
}
