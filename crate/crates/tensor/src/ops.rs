//! Eager (non-recording) versions of the neural building blocks.

use crate::error::{invalid, Result, TensorError};
use crate::kernels::{self, AttnDims};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Multi-head self-attention over `tokens × h` inputs with an additive
/// `tokens × tokens` bias on the pre-softmax scores.
pub fn attention_with_bias<T: Scalar>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    bias: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    Ok(attention_with_weights(queries, keys, values, bias, heads)?.0)
}

/// Like [`attention_with_bias`], also returning the `[heads, tokens, tokens]`
/// post-softmax weights.
pub fn attention_with_weights<T: Scalar>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    bias: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let shape = queries.shape();
    if shape.len() != 2 {
        return Err(invalid(format!("attention expects [tokens, h], got {shape:?}")));
    }
    let (tokens, h) = (shape[0], shape[1]);
    for t in [keys, values] {
        if t.shape() != shape {
            return Err(TensorError::ShapeMismatch {
                op: "attention_with_bias",
                expected: shape.to_vec(),
                got: t.shape().to_vec(),
            });
        }
    }
    if bias.shape() != [tokens, tokens] {
        return Err(TensorError::ShapeMismatch {
            op: "attention_with_bias",
            expected: vec![tokens, tokens],
            got: bias.shape().to_vec(),
        });
    }
    if heads == 0 || h % heads != 0 {
        return Err(invalid(format!("width {h} not divisible by {heads} heads")));
    }
    let dims = AttnDims { groups: 1, tokens, h, heads };
    let (out, probs) = kernels::attention(queries.data(), keys.data(), values.data(), Some(bias.data()), dims);
    Ok((
        Tensor::new(vec![tokens, h], out)?,
        Tensor::new(vec![heads, tokens, tokens], probs)?,
    ))
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| kernels::gelu(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("gelu of finite input is finite")
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, shift: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let h = *x.shape().last().ok_or_else(|| invalid("layer_norm on a scalar"))?;
    if gain.shape() != [h] || shift.shape() != [h] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            expected: vec![h],
            got: gain.shape().to_vec(),
        });
    }
    if eps <= T::zero() {
        return Err(invalid("layer_norm requires eps > 0"));
    }
    let (out, _, _) = kernels::layer_norm(x.data(), gain.data(), shift.data(), h, eps);
    Tensor::new(x.shape().to_vec(), out)
}
