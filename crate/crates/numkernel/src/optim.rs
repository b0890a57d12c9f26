use ndarray::ArrayD;

use crate::error::KernelError;
use crate::value::Value;

/// Adam hyperparameters. Defaults follow the training setup used across the
/// toolkit: lr 0.001, beta1 = beta2 = 0.9, global-norm clip 5.0 and a decay
/// factor of 0.999995 applied per step once validation scores stall.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub decay_rho: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.9,
            eps: 1e-8,
            clip_norm: 5.0,
            decay_rho: 0.999995,
        }
    }
}

/// Adam state over a fixed parameter list. Moments are kept positionally
/// aligned with the parameter slice handed to [`Optimizer::step`].
pub struct Optimizer {
    cfg: AdamConfig,
    lr: f64,
    step_count: u64,
    moments: Vec<(ArrayD<f64>, ArrayD<f64>)>,
}

impl Optimizer {
    pub fn new(params: &[Value], cfg: AdamConfig) -> Optimizer {
        let moments = params
            .iter()
            .map(|p| {
                let shape = p.data().raw_dim();
                (ArrayD::zeros(shape.clone()), ArrayD::zeros(shape))
            })
            .collect();
        Optimizer {
            lr: cfg.lr,
            cfg,
            step_count: 0,
            moments,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update over every parameter: clip the global L2 gradient
    /// norm to `clip_norm`, update biased moments, apply the bias-corrected
    /// step. Gradients are left untouched; callers zero them between steps.
    pub fn step(&mut self, params: &[Value]) -> Result<(), KernelError> {
        assert_eq!(
            params.len(),
            self.moments.len(),
            "optimizer built over {} parameters, stepped with {}",
            self.moments.len(),
            params.len()
        );
        let grads: Vec<ArrayD<f64>> = params
            .iter()
            .map(|p| {
                p.grad()
                    .unwrap_or_else(|| ArrayD::zeros(p.data().raw_dim()))
            })
            .collect();
        for (p, g) in params.iter().zip(&grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(KernelError::NonFiniteGrad(
                    p.name().unwrap_or("<unnamed>").to_string(),
                ));
            }
        }

        let sq_norm: f64 = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
        let norm = sq_norm.sqrt();
        let scale = if norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter().zip(&grads).zip(self.moments.iter_mut()) {
            let mut data = p.data_mut();
            for (((d, gv), mv), vv) in data
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let ge = gv * scale;
                *mv = self.cfg.beta1 * *mv + (1.0 - self.cfg.beta1) * ge;
                *vv = self.cfg.beta2 * *vv + (1.0 - self.cfg.beta2) * ge * ge;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *d -= self.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }

    /// Multiply the learning rate by the configured decay factor once.
    pub fn decay_lr(&mut self) {
        self.lr *= self.cfg.decay_rho;
    }
}

pub fn zero_grads(params: &[Value]) {
    for p in params {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn scalar_param(name: &str, v: f64) -> Value {
        Value::param(name, ArrayD::from_elem(IxDyn(&[]), v))
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let p = scalar_param("p", 1.5);
        p.zero_grad();
        let mut opt = Optimizer::new(std::slice::from_ref(&p), AdamConfig::default());
        opt.step(std::slice::from_ref(&p)).unwrap();
        assert_eq!(p.item(), 1.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With grad 1.0 and fresh moments, bias correction makes the first
        // update almost exactly -lr.
        let p = scalar_param("p", 1.0);
        let loss = p.mul(&Value::scalar(1.0)).sum();
        p.zero_grad();
        loss.backward().unwrap();
        let mut opt = Optimizer::new(std::slice::from_ref(&p), AdamConfig::default());
        opt.step(std::slice::from_ref(&p)).unwrap();
        let delta = 1.0 - p.item();
        assert!((delta - 0.001).abs() < 1e-8, "delta = {delta}");
    }

    #[test]
    fn global_norm_clipping_scales_effective_grads() {
        // One parameter with grad 50 -> clipped to 5, so the effective grad
        // feeding the moments is 5.0.
        let p = scalar_param("p", 0.0);
        let loss = p.scale(50.0).sum();
        p.zero_grad();
        loss.backward().unwrap();
        let mut opt = Optimizer::new(std::slice::from_ref(&p), AdamConfig::default());
        opt.step(std::slice::from_ref(&p)).unwrap();
        // m = 0.1*5, v = 0.1*25, mhat = 5, vhat = 25 -> step = lr * 5/5 = lr.
        let delta = -p.item();
        assert!((delta - 0.001).abs() < 1e-8, "delta = {delta}");
    }

    #[test]
    fn nan_grad_aborts_with_param_name() {
        let p = scalar_param("embeddings", 0.0);
        p.zero_grad();
        let loss = p.scale(0.0).log().sum(); // log(0) = -inf; grad becomes inf/NaN
        loss.backward().unwrap();
        let mut opt = Optimizer::new(std::slice::from_ref(&p), AdamConfig::default());
        let before = p.item();
        let err = opt.step(std::slice::from_ref(&p)).unwrap_err();
        assert!(err.to_string().contains("embeddings"));
        assert_eq!(p.item(), before, "aborted step must not touch parameters");
    }

    #[test]
    fn lr_decay_multiplies_by_rho() {
        let p = scalar_param("p", 0.0);
        let mut opt = Optimizer::new(std::slice::from_ref(&p), AdamConfig::default());
        opt.decay_lr();
        assert!((opt.lr() - 0.000999995).abs() < 1e-15);
        let mut opt2 = Optimizer::new(std::slice::from_ref(&p), AdamConfig::default());
        for _ in 0..10 {
            opt2.decay_lr();
        }
        assert!((opt2.lr() - 0.001 * 0.999995f64.powi(10)).abs() < 1e-18);
    }
}
