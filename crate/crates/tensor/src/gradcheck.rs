use crate::error::{invalid, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. Returns `max |analytic - fd| / max(1, |fd|)` over
/// every parameter coordinate.
///
/// `f` records the loss on a fresh graph given one leaf per parameter.
pub fn grad_check<F>(params: &[Tensor<f64>], fd_step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(invalid(format!("grad_check: fd_step must be positive, got {fd_step}")));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(TensorError::NotScalar(g.shape(loss).to_vec()));
        }
        Ok(v[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.numel()))
        .collect();

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for ti in 0..params.len() {
        for j in 0..params[ti].numel() {
            let orig = params[ti].data()[j];
            work[ti].data_mut()[j] = orig + fd_step;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = orig - fd_step;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * fd_step);
            if !fd.is_finite() {
                return Err(TensorError::NonFinite { op: "grad_check" });
            }
            let err = (analytic[ti][j] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
