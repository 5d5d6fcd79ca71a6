//! Adam with linear warmup and decoupled weight decay.

use crate::error::{invalid, Result, TensorError};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], base_lr: f64, warmup_ratio: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&warmup_ratio) {
            return Err(invalid(format!("warmup_ratio {warmup_ratio} outside [0, 1]")));
        }
        if weight_decay < 0.0 || base_lr <= 0.0 {
            return Err(invalid("base_lr must be > 0 and weight_decay >= 0"));
        }
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            base_lr,
            warmup_ratio,
            weight_decay,
        })
    }

    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        (self.warmup_ratio * total_steps as f64).ceil() as u64
    }

    /// Learning rate used for the 1-based optimizer step `step`.
    pub fn learning_rate(&self, step: u64, total_steps: u64) -> f64 {
        let warm = self.warmup_steps(total_steps);
        if warm == 0 || step >= warm {
            self.base_lr
        } else {
            self.base_lr * step as f64 / warm as f64
        }
    }
}

/// One optimizer step; `grads[i]` pairs with `params[i]`.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    total_steps: u64,
) -> Result<()> {
    if state.step_count >= total_steps {
        return Err(invalid(format!(
            "adam_step: step {} not below total_steps {total_steps}",
            state.step_count
        )));
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            expected: vec![params.len()],
            got: vec![grads.len()],
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    let t = state.step_count + 1;
    let lr = state.learning_rate(t, total_steps);
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    let (b1, b2, eps) = (c::<T>(BETA1), c::<T>(BETA2), c::<T>(EPS));
    let (lr_t, decay) = (c::<T>(lr), c::<T>(lr * state.weight_decay));
    let (inv_bc1, inv_bc2) = (c::<T>(1.0 / bc1), c::<T>(1.0 / bc2));
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let pd = p.data_mut();
        for j in 0..pd.len() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let mhat = m[j] * inv_bc1;
            let vhat = v[j] * inv_bc2;
            pd[j] = pd[j] - lr_t * mhat / (vhat.sqrt() + eps) - decay * pd[j];
        }
        if !p.is_finite() {
            return Err(TensorError::NonFinite { op: "adam_step" });
        }
    }
    state.step_count = t;
    Ok(())
}
