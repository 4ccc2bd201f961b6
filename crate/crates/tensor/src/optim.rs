use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay. Moment buffers are indexed by
/// parameter position, so the parameter list order must stay fixed.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Element>(params: &[Tensor<T>], cfg: AdamWConfig) -> Result<Self> {
        if cfg.lr.is_nan() || cfg.lr <= 0.0 {
            return Err(TensorError::Config(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        Ok(AdamW {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr` (the scheduled value; may be zero).
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step<T: Element>(&mut self, params: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(TensorError::Contract(format!(
                "optimizer built for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if lr < 0.0 {
            return Err(TensorError::Config(format!("negative learning rate {lr}")));
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.update_data(|data| {
                for (j, w) in data.iter_mut().enumerate() {
                    let g = grad.as_ref().map_or(0.0, |g| g[j].as_f64());
                    let mut wf = w.as_f64();
                    wf -= lr * weight_decay * wf;
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    wf -= lr * mhat / (vhat.sqrt() + eps);
                    *w = T::from_f64_lossy(wf);
                }
            });
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_keeps_params() {
        let p = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(&[p.clone()], cfg).unwrap();
        opt.step(&[p.clone()], 1e-3).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn descends_on_square() {
        let w = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
        let mut opt = AdamW::new(&[w.clone()], AdamWConfig::default()).unwrap();
        w.mul(&w).unwrap().sum_all().backward().unwrap();
        opt.step(&[w.clone()], 0.1).unwrap();
        assert!(w.item() < 1.0);
    }

    #[test]
    fn non_positive_lr_rejected() {
        let w = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
        let cfg = AdamWConfig { lr: 0.0, ..Default::default() };
        assert!(matches!(AdamW::new(&[w], cfg), Err(TensorError::Config(_))));
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.0005), 0.0005);
        assert!(cosine_lr(100, 100, 0.0005).abs() < 1e-20);
        assert!((cosine_lr(50, 100, 0.0005) - 0.00025).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for s in 0..=100 {
            let lr = cosine_lr(s, 100, 1.0);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
