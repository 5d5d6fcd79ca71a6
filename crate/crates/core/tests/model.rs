use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use taborder::model::*;
use taborder::rng::{substream, Stream, TabRng};
use taborder_tensor::{grad_check, Graph, Tensor, TensorError, Var};

fn small_config() -> ModelConfig {
    ModelConfig {
        h: 8,
        heads: 2,
        blocks_ord: 1,
        blocks_pred: 1,
        ff_multiplier: 2,
        ..ModelConfig::desk()
    }
}

fn params(config: &ModelConfig, seed: u64) -> ModelParams<f64> {
    ModelParams::init(config, &mut substream(seed, Stream::Init, 0)).unwrap()
}

fn random_input(n: usize, d: usize, missing_rate: f64, rng: &mut TabRng) -> ModelInput {
    let values = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let missing = (0..n * d).map(|_| rng.random::<f64>() < missing_rate).collect();
    ModelInput::new(n, d, values, missing).unwrap()
}

fn tensor_err(e: taborder::Error) -> TensorError {
    match e {
        taborder::Error::Tensor(t) => t,
        other => TensorError::InvalidArgument(other.to_string()),
    }
}

#[test]
fn three_column_hard_and_soft_masks() {
    let s = [0.8, 1.3, -0.5];
    let m = build_mask_bias(&s, 1.0, -5.0, MaskMode::Hard).unwrap();
    assert_eq!(m.hard, vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    let expect = [0.50, 0.38, 0.79, 0.62, 0.50, 0.86, 0.21, 0.14, 0.50];
    for (got, want) in m.soft.iter().zip(expect) {
        assert_abs_diff_eq!(*got, want, epsilon = 0.005);
    }
    let soft = build_mask_bias(&s, 1.0, -5.0, MaskMode::Soft).unwrap();
    for (b, a) in soft.bias.iter().zip(&soft.soft) {
        assert_abs_diff_eq!(*b, -5.0 * (1.0 - a), epsilon = 1e-15);
    }
    let st = build_mask_bias(&s, 1.0, -5.0, MaskMode::StraightThrough).unwrap();
    assert_eq!(st.bias, m.bias);
    assert_eq!(m.bias[1], -5.0);
    assert_eq!(m.bias[0], 0.0);
}

#[test]
fn equal_scores_allow_everything() {
    let m = build_mask_bias(&[0.3; 4], 1.0, -5.0, MaskMode::Hard).unwrap();
    assert!(m.hard.iter().all(|&a| a == 1.0));
    assert!(m.bias.iter().all(|&b| b == 0.0));
}

#[test]
fn mask_parameter_validation() {
    assert!(build_mask_bias(&[0.0, 1.0], 0.0, -5.0, MaskMode::Soft).is_err());
    assert!(build_mask_bias(&[0.0, 1.0], 1.0, 0.0, MaskMode::Soft).is_err());
    assert!(build_mask_bias(&[0.0, f64::NAN], 1.0, -1.0, MaskMode::Soft).is_err());
}

#[test]
fn order_extraction() {
    assert_eq!(extract_order(&[0.8, 1.3, -0.5]).unwrap(), vec![2, 0, 1]);
    assert_eq!(extract_order(&[1.0; 5]).unwrap(), vec![0, 1, 2, 3, 4]);
    assert_eq!(extract_order(&[4.0, 3.0, 2.0, 1.0]).unwrap(), vec![3, 2, 1, 0]);
    assert!(extract_order(&[0.0, f64::NAN]).is_err());
}

#[test]
fn variance_increments_per_missing_predecessor() {
    // columns 1, 2 precede column 3; σ²_base = 1
    let s = [0.0, 1.0, 2.0];
    let base = [1.0, 1.0, 1.0];
    let mut delta = vec![0.0; 9];
    delta[2 * 3] = 1.0;
    delta[2 * 3 + 1] = 2.0;
    let missing = [
        false, false, false, // nothing missing
        false, true, false, // parent 2 missing
        true, false, false, // parent 1 missing
    ];
    let v = pointwise_variance(&base, &delta, &s, &missing).unwrap();
    assert_eq!(v[2], 1.0);
    assert_eq!(v[5], 1.0 + 2.0);
    assert_eq!(v[8], 1.0 + 1.0);
    // all-missing row: both increments
    let v = pointwise_variance(&base, &delta, &s, &[true; 3]).unwrap();
    assert_eq!(v[2], 4.0);
    assert!(pointwise_variance(&base, &[-1.0; 9], &s, &missing).is_err());
}

#[test]
fn ties_add_no_increment() {
    let v = pointwise_variance(&[0.5, 0.5], &[1.0; 4], &[1.0, 1.0], &[true, true]).unwrap();
    assert_eq!(v, vec![0.5, 0.5]);
}

#[test]
fn embedding_examples() {
    let config = small_config();
    let mut p = params(&config, 1);
    let input = ModelInput::new(2, 2, vec![0.0, 1.5, -0.5, 9.0], vec![false, false, false, true]).unwrap();
    let e = embed_cells(&p, &input).unwrap();
    assert_eq!(e.shape(), &[2, 2, 8]);
    // missing cell at (1,1) vs an observed zero at (0,0)
    let w = p.get("embed.w").unwrap().data().to_vec();
    for k in 0..8 {
        let diff = e.data()[3 * 8 + k] - e.data()[k];
        assert_abs_diff_eq!(diff, w[8 + k], epsilon = 1e-15);
    }
    *p.get_mut("embed.w").unwrap() = Tensor::zeros(&[2, 8]);
    let e = embed_cells(&p, &input).unwrap();
    assert!(e.data().iter().all(|&v| v == 0.0));
    assert!(ModelInput::new(1, 1, vec![f64::INFINITY], vec![false]).is_err());
}

#[test]
fn degenerate_single_row_constant_head() {
    let config = small_config();
    let mut p = params(&config, 2);
    for name in p.names().to_vec() {
        if name.starts_with("order.block") && !name.contains("gain") {
            let shape = p.get(&name).unwrap().shape().to_vec();
            *p.get_mut(&name).unwrap() = Tensor::zeros(&shape);
        }
    }
    *p.get_mut("order.head.w2").unwrap() = Tensor::zeros(&[8, 1]);
    *p.get_mut("order.head.b2").unwrap() = Tensor::from_f64(&[1], &[0.7]).unwrap();
    let input = random_input(1, 4, 0.0, &mut substream(3, Stream::Data, 0));
    let s = infer_scores(&p, &input).unwrap();
    assert!(s.s.iter().all(|&v| v == 0.7));
    assert_eq!(s.order, vec![0, 1, 2, 3]);

    let one = ModelInput::new(1, 1, vec![0.0], vec![true]).unwrap();
    let out = predict(&p, &one, &MaskSpec::eval()).unwrap();
    assert!(out.mu[0].is_finite() && out.sigma2_point[0] > 0.0);
}

#[test]
fn heads_are_positive() {
    let config = small_config();
    for seed in 0..5 {
        let p = params(&config, seed);
        let input = random_input(6, 4, 0.3, &mut substream(seed, Stream::Data, 0));
        let out = predict(&p, &input, &MaskSpec::eval()).unwrap();
        assert!(out.delta.iter().all(|&v| v >= 0.0));
        assert!(out.sigma2_base.iter().all(|&v| v > 0.0));
        for r in 0..6 {
            for i in 0..4 {
                assert!(out.sigma2_point[r * 4 + i] >= out.sigma2_base[i]);
            }
        }
        let direct = pointwise_variance(&out.sigma2_base, &out.delta, &out.scores.s, &input.missing).unwrap();
        for (a, b) in direct.iter().zip(&out.sigma2_point) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}

#[test]
fn imposed_order_sets_scores() {
    let m = MaskSpec::from_order(&[2, 0, 1]);
    assert_eq!(m.fixed_scores.as_deref(), Some(&[1.0, 2.0, 0.0][..]));
    let p = params(&small_config(), 4);
    let input = random_input(3, 3, 0.0, &mut substream(4, Stream::Data, 0));
    let out = predict(&p, &input, &m).unwrap();
    assert_eq!(out.scores.order, vec![2, 0, 1]);
    assert!(predict(&p, &input, &MaskSpec::imposed(vec![0.0; 2])).is_err());
}

#[test]
fn later_columns_cannot_influence_earlier_ones() {
    let config = ModelConfig {
        blocks_pred: 2,
        ..small_config()
    };
    let (n, d) = (7, 5);
    for seed in 0..10u64 {
        let p = params(&config, 100 + seed);
        let mut rng = substream(seed, Stream::Eval, 0);
        let input = random_input(n, d, 0.2, &mut rng);
        let scores: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = MaskSpec::imposed(scores.clone());
        let base = predict(&p, &input, &mask).unwrap();
        for j in 0..d {
            let mut pert = input.clone();
            for r in 0..n {
                pert.values[r * d + j] += rng.random_range(-5.0..5.0);
            }
            let out = predict(&p, &pert, &mask).unwrap();
            for i in (0..d).filter(|&i| scores[j] > scores[i]) {
                for r in 0..n {
                    let k = r * d + i;
                    assert_eq!(out.mu[k].to_bits(), base.mu[k].to_bits());
                    assert_eq!(out.sigma2_point[k].to_bits(), base.sigma2_point[k].to_bits());
                }
            }
        }
    }
}

#[test]
fn f32_order_invariance() {
    let config = small_config();
    let p: ModelParams<f32> = ModelParams::init(&config, &mut substream(9, Stream::Init, 0)).unwrap();
    let input = random_input(5, 3, 0.0, &mut substream(9, Stream::Data, 0));
    let mask = MaskSpec::from_order(&[1, 2, 0]);
    let base = predict(&p, &input, &mask).unwrap();
    let mut pert = input.clone();
    for r in 0..5 {
        pert.values[r * 3] = 3.0;
    }
    let out = predict(&p, &pert, &mask).unwrap();
    for r in 0..5 {
        for i in [1, 2] {
            assert_eq!(base.mu[r * 3 + i], out.mu[r * 3 + i]);
        }
    }
}

fn permute_rows(input: &ModelInput, perm: &[usize]) -> ModelInput {
    let d = input.d;
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for &r in perm {
        values.extend_from_slice(&input.values[r * d..(r + 1) * d]);
        missing.extend_from_slice(&input.missing[r * d..(r + 1) * d]);
    }
    ModelInput::new(input.n, d, values, missing).unwrap()
}

fn permute_cols(input: &ModelInput, perm: &[usize]) -> ModelInput {
    let (n, d) = (input.n, input.d);
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for r in 0..n {
        for &c in perm {
            values.push(input.values[r * d + c]);
            missing.push(input.missing[r * d + c]);
        }
    }
    ModelInput::new(n, d, values, missing).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scores_are_row_invariant_and_column_equivariant(seed in 0u64..1000, n in 2usize..7, d in 2usize..5) {
        let p = params(&small_config(), seed);
        let mut rng = substream(seed, Stream::Data, 1);
        let input = random_input(n, d, 0.2, &mut rng);
        let base = infer_scores(&p, &input).unwrap();

        let mut rows: Vec<usize> = (0..n).collect();
        rows.reverse();
        rows.rotate_left(1);
        let s = infer_scores(&p, &permute_rows(&input, &rows)).unwrap();
        for (a, b) in s.s.iter().zip(&base.s) {
            prop_assert!((a - b).abs() < 1e-10);
        }

        let mut cols: Vec<usize> = (0..d).collect();
        cols.rotate_left(1);
        let s = infer_scores(&p, &permute_cols(&input, &cols)).unwrap();
        for (k, &c) in cols.iter().enumerate() {
            prop_assert!((s.s[k] - base.s[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn sorted_hard_mask_is_lower_triangular(s in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let mut uniq = s.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        prop_assume!(uniq.len() == s.len());
        let d = s.len();
        let a = hard_mask(&s);
        let order = extract_order(&s).unwrap();
        for (pi, &i) in order.iter().enumerate() {
            for (pj, &j) in order.iter().enumerate() {
                let want = if pj <= pi { 1.0 } else { 0.0 };
                prop_assert_eq!(a[i * d + j], want);
            }
        }
    }

    #[test]
    fn soft_mask_approaches_hard(s in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let d = s.len();
        let hard = hard_mask(&s);
        let soft = soft_mask(&s, 1e-4);
        for i in 0..d {
            for j in 0..d {
                let gap = (s[i] - s[j]).abs();
                if i != j && gap > 1e-2 {
                    prop_assert!((hard[i * d + j] - soft[i * d + j]).abs() < 1e-3);
                }
            }
        }
    }
}

fn score_gradient(mode: MaskMode) -> Vec<f64> {
    let p = params(&small_config(), 11);
    let input = random_input(4, 3, 0.0, &mut substream(11, Stream::Data, 0));
    let mut g = Graph::new();
    let pv = param_vars(&mut g, &p);
    let mask = MaskSpec {
        mode,
        tau: 1.0,
        beta: -5.0,
        fixed_scores: None,
    };
    let fv = forward(&mut g, &pv, &p, &input, &mask, None).unwrap();
    let loss = g.sum(fv.mu).unwrap();
    let grads = g.backward(loss).unwrap();
    grads.get_or_zeros(fv.scores, 3)
}

#[test]
fn straight_through_passes_gradient_to_scores() {
    let st = score_gradient(MaskMode::StraightThrough);
    assert!(st.iter().any(|&v| v.abs() > 1e-8), "{st:?}");
    let soft = score_gradient(MaskMode::Soft);
    assert!(soft.iter().any(|&v| v.abs() > 1e-8));
    let hard = score_gradient(MaskMode::Hard);
    assert!(hard.iter().all(|&v| v == 0.0), "{hard:?}");
}

fn model_loss(
    g: &mut Graph<f64>,
    vars: &[Var],
    p: &ModelParams<f64>,
    input: &ModelInput,
) -> taborder_tensor::Result<Var> {
    let mask = MaskSpec {
        mode: MaskMode::Soft,
        tau: 1.0,
        beta: -5.0,
        fixed_scores: None,
    };
    let fv = forward(g, vars, p, input, &mask, None).map_err(tensor_err)?;
    let n = g.value(fv.mu).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 5 + 1) % 7) as f64 / 3.0 - 1.0).collect();
    let a = g.mul_const(fv.mu, w.clone())?;
    let a = g.sum(a)?;
    let lv = g.mul_const(fv.sigma2_point, w)?;
    let lv = g.sum(lv)?;
    g.add(a, lv)
}

#[test]
fn full_model_gradient_check() {
    let p = params(&small_config(), 12);
    let input = random_input(4, 3, 0.3, &mut substream(12, Stream::Data, 0));
    let err = grad_check(p.tensors(), 1e-5, |g, vars| model_loss(g, vars, &p, &input)).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn params_validate_names_and_shapes() {
    let p = params(&small_config(), 13);
    let again = p.with_tensors(p.tensors().to_vec()).unwrap();
    assert_eq!(again, p);
    let mut ts = p.tensors().to_vec();
    ts[0] = Tensor::zeros(&[3, 8]);
    assert!(p.with_tensors(ts).is_err());
    assert!(ModelParams::<f64>::init(&ModelConfig { h: 10, heads: 4, ..ModelConfig::desk() }, &mut substream(0, Stream::Init, 0)).is_err());
    let count = p.count();
    assert!(count > 0);
    assert_eq!(p.cast::<f32>().count(), count);
}

#[test]
fn concurrent_forwards_share_params() {
    let p = params(&small_config(), 14);
    let inputs: Vec<ModelInput> = (0..4).map(|i| random_input(5, 3, 0.1, &mut substream(i, Stream::Data, 0))).collect();
    let serial: Vec<_> = inputs.iter().map(|x| predict(&p, x, &MaskSpec::eval()).unwrap()).collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = inputs.iter().map(|x| s.spawn(|| predict(&p, x, &MaskSpec::eval()).unwrap())).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

#[test]
fn library_grad_check_matches_local_functional() {
    let p = params(&small_config(), 12);
    let input = random_input(4, 3, 0.3, &mut substream(12, Stream::Data, 0));
    let err = model_grad_check(&p, &input, &grad_check_mask(), 1e-5).unwrap();
    let local = grad_check(p.tensors(), 1e-5, |g, vars| model_loss(g, vars, &p, &input)).unwrap();
    assert_eq!(err, local);
    assert!(model_grad_check(&p, &input, &MaskSpec::eval(), 1e-5).is_err());
}
