use haptic_autograd::Tensor;

use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counters, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    steps: Vec<u64>,
}

impl AdamState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            steps: vec![0; params.len()],
        }
    }

    pub fn first_moment(&self, i: usize) -> &[f32] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f32] {
        &self.v[i]
    }

    pub fn steps(&self, i: usize) -> u64 {
        self.steps[i]
    }
}

/// One bias-corrected Adam update:
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `θ ← θ − lr·m̂/(√v̂ + eps)`.
///
/// A tensor whose gradient is identically zero is left untouched, moments
/// and step counter included.
pub fn adam_step(
    params: &mut [Tensor<f32>],
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.steps.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} optimiser slots",
            params.len(),
            grads.len(),
            state.steps.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::Dimension(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if g.data().iter().all(|&x| x == 0.0) {
            continue;
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = f64::from(m[j]) / c1;
            let v_hat = f64::from(v[j]) / c2;
            *theta -= (lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
        }
    }
    Ok(())
}

/// Single-cycle cosine annealing from `base` at epoch 0 down to `floor` at
/// epoch `total − 1`.
pub fn cosine_lr(epoch: usize, total: usize, base: f64, floor: f64) -> Result<f64> {
    if epoch >= total {
        return Err(Error::Config(format!("epoch {epoch} outside 0..{total}")));
    }
    if total == 1 {
        return Ok(base);
    }
    let phase = std::f64::consts::PI * epoch as f64 / (total - 1) as f64;
    Ok(floor + (base - floor) * (1.0 + phase.cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor<f32> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.5f32, -3.0, 1e-3] {
            let mut p = vec![scalar(1.0)];
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[scalar(g)], &mut st, 1e-2, &AdamConfig::default()).unwrap();
            let moved = p[0].data()[0] - 1.0;
            assert!((moved + 1e-2 * g.signum()).abs() < 1e-5, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![scalar(2.0)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[scalar(1.0)], &mut st, 0.1, &AdamConfig::default()).unwrap();
        let (before, saved) = (p.clone(), st.clone());
        adam_step(&mut p, &[scalar(0.0)], &mut st, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st, saved);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![scalar(2.0)];
        let mut st = AdamState::new(&p);
        let g = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            adam_step(&mut p, &[g], &mut st, 0.1, &AdamConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 0.0).unwrap(), 1e-4);
        assert!(cosine_lr(99, 100, 1e-4, 0.0).unwrap().abs() < 1e-20);
        assert!((cosine_lr(2, 5, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(cosine_lr(0, 1, 0.3, 0.0).unwrap(), 0.3);
        assert!(cosine_lr(5, 5, 1.0, 0.0).is_err());
        let lrs: Vec<f64> = (0..37).map(|e| cosine_lr(e, 37, 0.2, 0.01).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| (0.01..=0.2).contains(&l)));
    }
}
