use taborder_tensor::{Graph, Scalar, Tensor, Var};

use super::mask::{strict_predecessors, MaskBiasOp, MaskMode, OrderScores, HARD_BETA};
use super::params::{BranchIdx, LayerIdx, ModelParams};
use crate::error::{invalid, Result};
use crate::rng::TabRng;
use crate::table::Table;

const LN_EPS: f64 = 1e-5;
/// Lower bound added to the per-column base variance.
pub const SIGMA2_FLOOR: f64 = 1e-6;

/// Network input: standardized values (0 at missing cells) and the
/// missingness flags, both `n × d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl ModelInput {
    pub fn new(n: usize, d: usize, values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        if n == 0 || d == 0 || values.len() != n * d || missing.len() != n * d {
            return Err(invalid(format!("model input must be non-empty {n}×{d}")));
        }
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(&missing) {
            if m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(invalid("non-finite model input"));
            }
        }
        Ok(Self { n, d, values, missing })
    }

    /// Takes an already standardized table as is.
    pub fn from_table(table: &Table) -> Result<Self> {
        let values = table.values().to_vec();
        Self::new(table.n(), table.d(), values, table.mask().to_vec())
    }
}

/// How the feature-mixing mask is formed.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub mode: MaskMode,
    pub tau: f64,
    pub beta: f64,
    /// Imposed scores; the order branch is skipped when set.
    pub fixed_scores: Option<Vec<f64>>,
}

impl MaskSpec {
    /// Hard mask from inferred scores with disallowed weights exactly zero.
    pub fn eval() -> Self {
        Self {
            mode: MaskMode::Hard,
            tau: 1.0,
            beta: HARD_BETA,
            fixed_scores: None,
        }
    }

    pub fn imposed(scores: Vec<f64>) -> Self {
        Self {
            fixed_scores: Some(scores),
            ..Self::eval()
        }
    }

    /// Scores that place columns in `order` (first = most upstream).
    pub fn from_order(order: &[usize]) -> Self {
        let mut s = vec![0.0; order.len()];
        for (pos, &c) in order.iter().enumerate() {
            s[c] = pos as f64;
        }
        Self::imposed(s)
    }

    /// No restriction between columns and no variance increments.
    pub fn all_ones(d: usize) -> Self {
        Self::imposed(vec![0.0; d])
    }
}

/// Tape handles produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub scores: Var,
    pub mu: Var,
    pub sigma2_base: Var,
    pub delta: Var,
    pub sigma2_point: Var,
}

/// Dropout source; `None` disables dropout.
pub type DropoutRng<'a> = Option<&'a mut TabRng>;

struct Ctx<'a, 'r, T: Scalar> {
    g: &'a mut Graph<T>,
    p: &'a [Var],
    heads: usize,
    dropout: f64,
    rng: DropoutRng<'r>,
}

impl<T: Scalar> Ctx<'_, '_, T> {
    fn drop(&mut self, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(r) if self.dropout > 0.0 => Ok(self.g.dropout(x, self.dropout, r)?),
            _ => Ok(x),
        }
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Result<Var> {
        Ok(self.g.linear(x, self.p[w], self.p[b])?)
    }

    /// Prenorm encoder layer on `[groups, tokens, h]`.
    fn layer(&mut self, x: Var, l: &LayerIdx, groups: usize, tokens: usize, bias: Option<Var>) -> Result<Var> {
        let eps = T::from_f64(LN_EPS);
        let y = self.g.layer_norm(x, self.p[l.ln1_g], self.p[l.ln1_b], eps)?;
        let q = self.linear(y, l.wq, l.bq)?;
        let k = self.linear(y, l.wk, l.bk)?;
        let v = self.linear(y, l.wv, l.bv)?;
        let a = self.g.attention(q, k, v, bias, groups, tokens, self.heads)?;
        let o = self.linear(a, l.wo, l.bo)?;
        let o = self.drop(o)?;
        let x = self.g.add(x, o)?;
        let y = self.g.layer_norm(x, self.p[l.ln2_g], self.p[l.ln2_b], eps)?;
        let f = self.linear(y, l.w1, l.b1)?;
        let f = self.g.gelu(f)?;
        let f = self.linear(f, l.w2, l.b2)?;
        let f = self.drop(f)?;
        Ok(self.g.add(x, f)?)
    }

    /// Alternating sample-mixing / feature-mixing blocks on `[n, d, h]`.
    fn branch(&mut self, x: Var, br: &BranchIdx, n: usize, d: usize, bias: Option<Var>) -> Result<Var> {
        let mut x = x;
        for (rows, cols) in &br.blocks {
            let t = self.g.swap_axes01(x, n, d)?;
            let t = self.layer(t, rows, d, n, None)?;
            x = self.g.swap_axes01(t, d, n)?;
            x = self.layer(x, cols, n, d, bias)?;
        }
        Ok(self.g.layer_norm(x, self.p[br.ln_g], self.p[br.ln_b], T::from_f64(LN_EPS))?)
    }
}

/// Registers every parameter tensor as a trainable leaf.
pub fn param_vars<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>) -> Vec<Var> {
    params.tensors().iter().map(|t| g.param(t)).collect()
}

/// Registers the parameters without gradient tracking.
pub fn const_vars<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>) -> Vec<Var> {
    params.tensors().iter().map(|t| g.leaf(t)).collect()
}

fn embed<T: Scalar>(g: &mut Graph<T>, pv: &[Var], params: &ModelParams<T>, input: &ModelInput) -> Result<Var> {
    let (n, d) = (input.n, input.d);
    let mut x = Vec::with_capacity(n * d * 2);
    for (&v, &m) in input.values.iter().zip(&input.missing) {
        x.push(T::from_f64(if m { 0.0 } else { v }));
        x.push(if m { T::one() } else { T::zero() });
    }
    let x = g.constant(&[n, d, 2], x)?;
    let l = &params.layout;
    Ok(g.linear(x, pv[l.emb_w], pv[l.emb_b])?)
}

/// Order branch only: returns the `[d]` score variable.
pub fn forward_scores<T: Scalar>(
    g: &mut Graph<T>,
    pv: &[Var],
    params: &ModelParams<T>,
    input: &ModelInput,
    rng: DropoutRng<'_>,
) -> Result<Var> {
    let e = embed(g, pv, params, input)?;
    scores_from_embedding(g, pv, params, e, input, rng)
}

fn scores_from_embedding<T: Scalar>(
    g: &mut Graph<T>,
    pv: &[Var],
    params: &ModelParams<T>,
    e: Var,
    input: &ModelInput,
    rng: DropoutRng<'_>,
) -> Result<Var> {
    let l = &params.layout;
    let (n, d) = (input.n, input.d);
    let mut ctx = Ctx {
        g,
        p: pv,
        heads: params.config().heads,
        dropout: params.config().dropout,
        rng,
    };
    let hid = ctx.branch(e, &l.ord, n, d, None)?;
    let f = ctx.linear(hid, l.ord_w1, l.ord_b1)?;
    let f = ctx.g.gelu(f)?;
    let f = ctx.linear(f, l.ord_w2, l.ord_b2)?;
    let f = ctx.g.reshape(f, &[n, d])?;
    Ok(ctx.g.mean_axis0(f)?)
}

/// Full forward pass on the tape.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    pv: &[Var],
    params: &ModelParams<T>,
    input: &ModelInput,
    mask: &MaskSpec,
    mut rng: DropoutRng<'_>,
) -> Result<ForwardVars> {
    let (n, d) = (input.n, input.d);
    let e = embed(g, pv, params, input)?;
    let scores = match &mask.fixed_scores {
        Some(s) => {
            if s.len() != d {
                return Err(invalid(format!("{} imposed scores for {d} columns", s.len())));
            }
            g.constant(&[d], s.iter().map(|&v| T::from_f64(v)).collect())?
        }
        None => scores_from_embedding(g, pv, params, e, input, rng.as_deref_mut())?,
    };
    let bias = g.custom(&[scores], Box::new(MaskBiasOp::new(mask.tau, mask.beta, mask.mode)?))?;
    let l = &params.layout;
    let mut ctx = Ctx {
        g,
        p: pv,
        heads: params.config().heads,
        dropout: params.config().dropout,
        rng,
    };
    let hid = ctx.branch(e, &l.pred, n, d, Some(bias))?;

    let mu = ctx.linear(hid, l.mu_w, l.mu_b)?;
    let mu = ctx.g.reshape(mu, &[n, d])?;

    let sg = ctx.linear(hid, l.sigma_w, l.sigma_b)?;
    let sg = ctx.g.reshape(sg, &[n, d])?;
    let sg = ctx.g.mean_axis0(sg)?;
    let sg = ctx.g.softplus(sg)?;
    let sigma2_base = ctx.g.add_scalar(sg, T::from_f64(SIGMA2_FLOOR))?;

    let hbar = ctx.g.mean_axis0(hid)?;
    let u = ctx.g.matmul(hbar, ctx.p[l.delta_wa])?;
    let v = ctx.g.matmul(hbar, ctx.p[l.delta_wb])?;
    let pair = ctx.g.pair_sum(u, v)?;
    let pair = ctx.g.add_bias(pair, ctx.p[l.delta_b1])?;
    let pair = ctx.g.gelu(pair)?;
    let dl = ctx.linear(pair, l.delta_w2, l.delta_b2)?;
    let dl = ctx.g.reshape(dl, &[d, d])?;
    let delta = ctx.g.softplus(dl)?;

    let s_vals: Vec<f64> = ctx.g.value(scores).iter().map(|v| v.as_f64()).collect();
    let pred = strict_predecessors(&s_vals).into_iter().map(T::from_f64).collect();
    let inc = ctx.g.mul_const(delta, pred)?;
    let inc = ctx.g.transpose(inc)?;
    let m = input.missing.iter().map(|&m| if m { T::one() } else { T::zero() }).collect();
    let m = ctx.g.constant(&[n, d], m)?;
    let inc = ctx.g.matmul(m, inc)?;
    let base = ctx.g.broadcast_rows(sigma2_base, n)?;
    let sigma2_point = ctx.g.add(base, inc)?;

    Ok(ForwardVars {
        scores,
        mu,
        sigma2_base,
        delta,
        sigma2_point,
    })
}

/// Decoded predictions, all in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub n: usize,
    pub d: usize,
    pub mu: Vec<f64>,
    pub sigma2_base: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma2_point: Vec<f64>,
    pub scores: OrderScores,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Evaluation-mode prediction (no dropout).
pub fn predict<T: Scalar>(params: &ModelParams<T>, input: &ModelInput, mask: &MaskSpec) -> Result<PredictionOutput> {
    let mut g = Graph::new();
    let pv = const_vars(&mut g, params);
    let fv = forward(&mut g, &pv, params, input, mask, None)?;
    Ok(PredictionOutput {
        n: input.n,
        d: input.d,
        mu: to_f64(g.value(fv.mu)),
        sigma2_base: to_f64(g.value(fv.sigma2_base)),
        delta: to_f64(g.value(fv.delta)),
        sigma2_point: to_f64(g.value(fv.sigma2_point)),
        scores: OrderScores::new(to_f64(g.value(fv.scores)))?,
    })
}

/// Evaluation-mode order inference.
pub fn infer_scores<T: Scalar>(params: &ModelParams<T>, input: &ModelInput) -> Result<OrderScores> {
    let mut g = Graph::new();
    let pv = const_vars(&mut g, params);
    let s = forward_scores(&mut g, &pv, params, input, None)?;
    OrderScores::new(to_f64(g.value(s)))
}

/// Cell embeddings `[n, d, h]`.
pub fn embed_cells<T: Scalar>(params: &ModelParams<T>, input: &ModelInput) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let pv = const_vars(&mut g, params);
    let e = embed(&mut g, &pv, params, input)?;
    Ok(g.tensor(e))
}
