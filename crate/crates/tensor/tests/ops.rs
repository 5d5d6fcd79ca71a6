use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use taborder_tensor::ops::{attention_with_bias, attention_with_weights, gelu, layer_norm};
use taborder_tensor::{adam_step, AdamState, Tensor, TensorError};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn single_token_attention_returns_its_value() {
    let q = t(&[1, 4], &[0.3, -1.2, 0.5, 2.0]);
    let v = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
    let out = attention_with_bias(&q, &q, &v, &Tensor::zeros(&[1, 1]), 2).unwrap();
    assert_eq!(out.data(), v.data());
}

#[test]
fn diagonal_bias_collapses_to_identity_mixing() {
    let x = t(&[3, 2], &[0.1, 0.9, -0.4, 0.3, 1.5, -2.0]);
    let v = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut bias = vec![-1e9; 9];
    for i in 0..3 {
        bias[i * 3 + i] = 0.0;
    }
    let out = attention_with_bias(&x, &x, &v, &t(&[3, 3], &bias), 1).unwrap();
    assert_eq!(out.data(), v.data());
}

#[test]
fn equal_logits_average_the_values() {
    let q = Tensor::<f64>::zeros(&[3, 2]);
    let k = t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, -1.0, 2.0]);
    let v = t(&[3, 2], &[1.0, 2.0, 4.0, 8.0, 7.0, -1.0]);
    let (out, w) = attention_with_weights(&q, &k, &v, &Tensor::zeros(&[3, 3]), 1).unwrap();
    for &p in w.data() {
        assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
    }
    assert_abs_diff_eq!(out.data()[0], 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(out.data()[1], 3.0, epsilon = 1e-12);
}

#[test]
fn attention_rejects_bad_shapes() {
    let x = Tensor::<f64>::zeros(&[3, 4]);
    let err = attention_with_bias(&x, &x, &x, &Tensor::zeros(&[3, 3]), 3).unwrap_err();
    assert!(matches!(err, TensorError::InvalidArgument(_)));
    let err = attention_with_bias(&x, &x, &x, &Tensor::zeros(&[2, 3]), 2).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    let k = Tensor::<f64>::zeros(&[2, 4]);
    assert!(attention_with_bias(&x, &k, &x, &Tensor::zeros(&[3, 3]), 2).is_err());
}

#[test]
fn gelu_reference_values() {
    let out = gelu(&t(&[3], &[0.0, 10.0, -1.0]));
    assert_eq!(out.data()[0], 0.0);
    assert!((9.999..=10.0).contains(&out.data()[1]));
    // −Φ(−1)
    assert_abs_diff_eq!(out.data()[2], -0.158_655_253_931_457, epsilon = 1e-12);
}

#[test]
fn layer_norm_reference_rows() {
    let ones = Tensor::<f64>::ones(&[2]);
    let zeros = Tensor::<f64>::zeros(&[2]);
    let constant = layer_norm(&t(&[1, 2], &[3.0, 3.0]), &ones, &zeros, 1e-5).unwrap();
    assert_eq!(constant.data(), &[0.0, 0.0]);
    let pm = layer_norm(&t(&[1, 2], &[1.0, -1.0]), &ones, &zeros, 1e-12).unwrap();
    assert_abs_diff_eq!(pm.data()[0], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(pm.data()[1], -1.0, epsilon = 1e-9);
    let shift = t(&[2], &[0.25, -4.0]);
    let flat = layer_norm(&t(&[2, 2], &[5.0, -3.0, 0.1, 0.7]), &zeros, &shift, 1e-5).unwrap();
    assert_eq!(flat.data(), &[0.25, -4.0, 0.25, -4.0]);
    assert!(layer_norm(&t(&[1, 2], &[1.0, 2.0]), &ones, &zeros, 0.0).is_err());
}

#[test]
fn tensor_rejects_non_finite_and_bad_shapes() {
    assert!(matches!(
        Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]),
        Err(TensorError::NonFinite { .. })
    ));
    assert!(matches!(
        Tensor::<f64>::new(vec![2, 2], vec![1.0]),
        Err(TensorError::ShapeMismatch { .. })
    ));
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut params = vec![t(&[3], &[1.0, -2.0, 0.5])];
    let before = params.clone();
    let grads = vec![Tensor::zeros(&[3])];
    let mut st = AdamState::new(&params, 1e-3, 0.0, 0.0).unwrap();
    for _ in 0..5 {
        adam_step(&mut params, &grads, &mut st, 10).unwrap();
    }
    assert_eq!(params, before);
    assert_eq!(st.step_count, 5);
}

#[test]
fn adam_first_step_is_sign_sized() {
    let lr = 1e-2;
    let mut params = vec![t(&[4], &[0.0, 1.0, -1.0, 3.0])];
    let grads = vec![t(&[4], &[5.0, -0.001, 1e3, -2.0])];
    let before = params[0].data().to_vec();
    let mut st = AdamState::new(&params, lr, 0.0, 0.0).unwrap();
    adam_step(&mut params, &grads, &mut st, 100).unwrap();
    for ((p, b), g) in params[0].data().iter().zip(&before).zip(grads[0].data()) {
        let delta = p - b;
        assert!(delta.abs() <= lr * (1.0 + 1e-6));
        assert!(delta.abs() >= lr * 0.99);
        assert_eq!(delta.signum(), -g.signum());
    }
}

#[test]
fn adam_linear_warmup() {
    let st = AdamState::<f64>::new(&[Tensor::zeros(&[1])], 2e-4, 0.03, 0.01).unwrap();
    assert_eq!(st.warmup_steps(1000), 30);
    assert_abs_diff_eq!(st.learning_rate(15, 1000), 1e-4, epsilon = 1e-18);
    assert_abs_diff_eq!(st.learning_rate(30, 1000), 2e-4, epsilon = 1e-18);
    assert_abs_diff_eq!(st.learning_rate(500, 1000), 2e-4, epsilon = 1e-18);
}

#[test]
fn adam_rejects_overrun_and_shape_mismatch() {
    let mut params = vec![Tensor::<f64>::zeros(&[2])];
    let mut st = AdamState::new(&params, 1e-3, 0.0, 0.0).unwrap();
    let bad = vec![Tensor::zeros(&[3])];
    assert!(adam_step(&mut params, &bad, &mut st, 5).is_err());
    let good = vec![Tensor::zeros(&[2])];
    adam_step(&mut params, &good, &mut st, 1).unwrap();
    assert!(adam_step(&mut params, &good, &mut st, 1).is_err());
}

#[test]
fn adam_weight_decay_is_decoupled() {
    let mut params = vec![t(&[1], &[2.0])];
    let mut st = AdamState::new(&params, 0.1, 0.0, 0.5).unwrap();
    adam_step(&mut params, &[Tensor::zeros(&[1])], &mut st, 10).unwrap();
    assert_abs_diff_eq!(params[0].data()[0], 2.0 - 0.1 * 0.5 * 2.0, epsilon = 1e-15);
}

proptest! {
    #[test]
    fn attention_weights_are_row_stochastic(
        tokens in 1usize..6,
        seed in proptest::collection::vec(-3.0f64..3.0, 6 * 4 * 3 + 36),
    ) {
        let h = 4;
        let n = tokens * h;
        let q = t(&[tokens, h], &seed[..n]);
        let k = t(&[tokens, h], &seed[n..2 * n]);
        let v = t(&[tokens, h], &seed[2 * n..3 * n]);
        let b = t(&[tokens, tokens], &seed[72..72 + tokens * tokens]);
        let (_, w) = attention_with_weights(&q, &k, &v, &b, 2).unwrap();
        for row in w.data().chunks(tokens) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes_tokens(data in proptest::collection::vec(-50.0f64..50.0, 8)) {
        let x = t(&[2, 4], &data);
        let eps = 1e-5;
        let out = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), eps).unwrap();
        for (row, xin) in out.data().chunks(4).zip(data.chunks(4)) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            prop_assert!(mean.abs() < 1e-6);
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            let m_in: f64 = xin.iter().sum::<f64>() / 4.0;
            let v_in: f64 = xin.iter().map(|v| (v - m_in).powi(2)).sum::<f64>() / 4.0;
            // exact expected shrinkage from the eps regularizer
            prop_assert!((var - v_in / (v_in + eps)).abs() < 1e-9);
        }
    }
}
