use serde::{Deserialize, Serialize};
use taborder_tensor::{kernels, CustomOp, Scalar, TensorError};

use crate::error::{invalid, Result};

/// Bias used for disallowed pairs in hard evaluation: large enough that the
/// softmax weight underflows to exactly zero in both precisions.
pub const HARD_BETA: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Hard,
    Soft,
    /// Hard values forward, soft-gate gradients backward.
    StraightThrough,
}

/// Scores with their ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderScores {
    pub s: Vec<f64>,
    pub order: Vec<usize>,
}

impl OrderScores {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        let order = extract_order(&s)?;
        Ok(Self { s, order })
    }
}

/// Ascending stable sort of the scores; ties keep column-index order.
pub fn extract_order(s: &[f64]) -> Result<Vec<usize>> {
    if s.iter().any(|v| v.is_nan()) {
        return Err(invalid("NaN order score"));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).expect("no NaN"));
    Ok(idx)
}

/// `A[i][j] = 1` iff column `i` may attend to column `j` (`s_j ≤ s_i`).
pub fn hard_mask(s: &[f64]) -> Vec<f64> {
    let d = s.len();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = if s[j] <= s[i] { 1.0 } else { 0.0 };
        }
    }
    a
}

/// `Ã[i][j] = sigmoid((s_i − s_j)/τ)`
pub fn soft_mask(s: &[f64], tau: f64) -> Vec<f64> {
    let d = s.len();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = kernels::sigmoid((s[i] - s[j]) / tau);
        }
    }
    a
}

/// `L[i][j] = 1(s_j < s_i)`: strict predecessors that inflate variance.
pub fn strict_predecessors(s: &[f64]) -> Vec<f64> {
    let d = s.len();
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            if s[j] < s[i] {
                l[i * d + j] = 1.0;
            }
        }
    }
    l
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBias {
    pub d: usize,
    /// Additive attention bias, `d × d` row-major (row = attending column).
    pub bias: Vec<f64>,
    pub hard: Vec<f64>,
    pub soft: Vec<f64>,
}

fn check_params(tau: f64, beta: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("tau must be positive, got {tau}")));
    }
    if !(beta < 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be negative, got {beta}")));
    }
    Ok(())
}

pub fn build_mask_bias(scores: &[f64], tau: f64, beta: f64, mode: MaskMode) -> Result<MaskBias> {
    check_params(tau, beta)?;
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite order score"));
    }
    let hard = hard_mask(scores);
    let soft = soft_mask(scores, tau);
    let src = match mode {
        MaskMode::Soft => &soft,
        MaskMode::Hard | MaskMode::StraightThrough => &hard,
    };
    let bias = src.iter().map(|a| beta * (1.0 - a)).collect();
    Ok(MaskBias {
        d: scores.len(),
        bias,
        hard,
        soft,
    })
}

/// Tape operation `s [d] → bias [d, d]`.
pub(crate) struct MaskBiasOp {
    pub tau: f64,
    pub beta: f64,
    pub mode: MaskMode,
}

impl MaskBiasOp {
    pub fn new(tau: f64, beta: f64, mode: MaskMode) -> Result<Self> {
        check_params(tau, beta)?;
        Ok(Self { tau, beta, mode })
    }
}

impl<T: Scalar> CustomOp<T> for MaskBiasOp {
    fn name(&self) -> &'static str {
        "mask_bias"
    }

    fn forward(&self, inputs: &[&[T]]) -> taborder_tensor::Result<(Vec<usize>, Vec<T>)> {
        let s: Vec<f64> = inputs[0].iter().map(|v| v.as_f64()).collect();
        let m = build_mask_bias(&s, self.tau, self.beta, self.mode)
            .map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
        let d = s.len();
        Ok((vec![d, d], m.bias.into_iter().map(T::from_f64).collect()))
    }

    fn backward(&self, inputs: &[&[T]], _output: &[T], grad_out: &[T]) -> Vec<Option<Vec<T>>> {
        if self.mode == MaskMode::Hard {
            return vec![None];
        }
        let s: Vec<f64> = inputs[0].iter().map(|v| v.as_f64()).collect();
        let d = s.len();
        let mut ds = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                let g = kernels::sigmoid((s[i] - s[j]) / self.tau);
                // bias = β(1 − g(u)), u = (s_i − s_j)/τ
                let dbdu = -self.beta * g * (1.0 - g) / self.tau;
                let go = grad_out[i * d + j].as_f64() * dbdu;
                ds[i] += go;
                ds[j] -= go;
            }
        }
        vec![Some(ds.into_iter().map(T::from_f64).collect())]
    }
}

/// `σ²_point[r][i] = σ²_base[i] + Σ_j δ[i][j]·1(s_j < s_i)·m[r][j]`
///
/// `missing` is `n × d` row-major.
pub fn pointwise_variance(
    sigma2_base: &[f64],
    delta: &[f64],
    scores: &[f64],
    missing: &[bool],
) -> Result<Vec<f64>> {
    let d = sigma2_base.len();
    if delta.len() != d * d || scores.len() != d || missing.len() % d.max(1) != 0 {
        return Err(invalid("pointwise_variance: inconsistent shapes"));
    }
    if delta.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(invalid("pointwise_variance: negative delta"));
    }
    let n = if d == 0 { 0 } else { missing.len() / d };
    let mut out = Vec::with_capacity(n * d);
    for r in 0..n {
        for i in 0..d {
            let mut v = sigma2_base[i];
            for j in 0..d {
                if scores[j] < scores[i] && missing[r * d + j] {
                    v += delta[i * d + j];
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}
