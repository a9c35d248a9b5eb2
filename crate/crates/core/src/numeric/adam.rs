//! Named trainable parameters and the Adam update.

use super::{NumericError, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Base learning rate halved after every 50 epochs.
pub fn lr_schedule(base: f64, epoch: usize) -> f64 {
    base * 0.5f64.powi((epoch / 50) as i32)
}

/// A tensor with a name, an incoming gradient slot, and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.len();
        Parameter {
            name: name.into(),
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn set_grad(&mut self, grad: Tensor) {
        assert_eq!(grad.shape(), self.value.shape(), "gradient shape mismatch");
        self.grad = Some(grad);
    }
}

/// One Adam step over every parameter. Each parameter must carry a gradient;
/// gradients are consumed by the step.
pub fn adam_step(params: &mut [Parameter], cfg: &AdamConfig) -> Result<(), NumericError> {
    for p in params.iter_mut() {
        let grad = p
            .grad
            .take()
            .ok_or_else(|| NumericError::MissingGradient(p.name.clone()))?;
        p.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(p.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(p.t as i32);
        let gv = grad.values();
        let pv = p.value.values_mut();
        for i in 0..gv.len() {
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gv[i];
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gv[i] * gv[i];
            let mhat = p.m[i] / bc1;
            let vhat = p.v[i] / bc2;
            pv[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
