use taborder_tensor::{grad_check, Graph, TensorError, Var};

use super::mask::MaskMode;
use super::network::{forward, MaskSpec, ModelInput};
use super::params::ModelParams;
use crate::error::{invalid, Result};

/// Soft-mask relaxation the finite-difference check differentiates through.
pub fn grad_check_mask() -> MaskSpec {
    MaskSpec {
        mode: MaskMode::Soft,
        tau: 1.0,
        beta: -5.0,
        fixed_scores: None,
    }
}

/// Largest relative error between analytic and central-difference gradients
/// of a fixed linear functional of `(mu, sigma2_point)` over every parameter.
pub fn model_grad_check(params: &ModelParams<f64>, input: &ModelInput, mask: &MaskSpec, fd_step: f64) -> Result<f64> {
    if mask.mode == MaskMode::Hard || mask.mode == MaskMode::StraightThrough {
        return Err(invalid("grad check needs a differentiable (soft) mask"));
    }
    let loss = |g: &mut Graph<f64>, vars: &[Var]| -> taborder_tensor::Result<Var> {
        let fv = forward(g, vars, params, input, mask, None).map_err(|e| match e {
            crate::Error::Tensor(t) => t,
            other => TensorError::InvalidArgument(other.to_string()),
        })?;
        let n = g.value(fv.mu).len();
        let w: Vec<f64> = (0..n).map(|i| ((i * 5 + 1) % 7) as f64 / 3.0 - 1.0).collect();
        let a = g.mul_const(fv.mu, w.clone())?;
        let a = g.sum(a)?;
        let b = g.mul_const(fv.sigma2_point, w)?;
        let b = g.sum(b)?;
        g.add(a, b)
    };
    Ok(grad_check(params.tensors(), fd_step, loss)?)
}
