use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AutogradError, Result};
use crate::graph::{Fault, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Number of coordinates to compare. Every coordinate is checked when
    /// the parameters hold fewer.
    pub coordinates: usize,
    pub seed: u64,
    /// Applied to the analytic pass only.
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            coordinates: 200,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates rejected because a perturbation flipped a ReLU.
    pub skipped_kinks: usize,
    pub worst: Option<Coordinate>,
    /// Every compared coordinate, in sampling order.
    pub compared: Vec<Coordinate>,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// `f` receives a fresh graph and one leaf per parameter tensor and must
/// return the scalar loss. Coordinates whose ±ε evaluations change any ReLU
/// on/off pattern are skipped and replaced by another sample, since the
/// finite difference straddles a kink there.
pub fn grad_check<F>(params: &[Tensor<f64>], mut f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(cfg.eps > 0.0) {
        return Err(AutogradError::invalid("grad_check", "eps must be positive"));
    }
    let mut graph = Graph::new().with_kink_tracking().with_fault(cfg.fault);
    let vars: Vec<Var> = params.iter().map(|p| graph.param(p.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    graph.backward(loss)?;
    let base_signature = graph.kink_signature();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| graph.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    drop(graph);

    let mut probe = |theta: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new().with_kink_tracking();
        let vars: Vec<Var> = theta.iter().map(|p| g.constant(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let value = g
            .value(loss)
            .item()
            .ok_or_else(|| AutogradError::NonScalarLoss(g.shape(loss).to_vec()))?;
        Ok((value, g.kink_signature()))
    };

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.numel();
            Some(start)
        })
        .collect();
    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let candidates = index::sample(&mut rng, total, total.min(cfg.coordinates.saturating_mul(4).max(1)));

    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
        compared: Vec::new(),
    };
    for flat in candidates.iter() {
        if report.checked >= cfg.coordinates {
            break;
        }
        let tensor = offsets.partition_point(|&o| o <= flat) - 1;
        let index = flat - offsets[tensor];
        let original = theta[tensor].data()[index];
        theta[tensor].data_mut()[index] = original + cfg.eps;
        let (plus, sig_plus) = probe(&theta)?;
        theta[tensor].data_mut()[index] = original - cfg.eps;
        let (minus, sig_minus) = probe(&theta)?;
        theta[tensor].data_mut()[index] = original;
        if sig_plus != base_signature || sig_minus != base_signature {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let analytic = analytic[tensor].data()[index];
        let rel_error = relative_error(analytic, numeric);
        let coord = Coordinate {
            tensor,
            index,
            analytic,
            numeric,
            rel_error,
        };
        report.checked += 1;
        if report.worst.is_none() || rel_error > report.max_rel_error {
            report.max_rel_error = rel_error;
            report.worst = Some(coord.clone());
        }
        report.compared.push(coord);
    }
    Ok(report)
}
