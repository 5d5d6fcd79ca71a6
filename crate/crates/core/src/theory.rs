//! Numerical checks of the masked-likelihood gain: the closed-form gain
//! `G(R, q)`, forward/backward signal-to-noise estimates for a bivariate
//! additive noise model, and the comparison between the two directions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::rng::TabRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Backward denominator below this fraction of `Var(X)` is degenerate.
pub const DEGENERATE_FRACTION: f64 = 1e-4;
pub const DEFAULT_K: usize = 50;

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("q = {q} outside (0, 1)")))
    }
}

/// `G(R, q) = ½[ln((1−q) + qR) − q ln R]`
pub fn gain(r: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    if !(r >= 1.0 && r.is_finite()) {
        return Err(invalid(format!("R = {r} must be finite and >= 1")));
    }
    Ok(0.5 * (((1.0 - q) + q * r).ln() - q * r.ln()))
}

/// `∂G/∂R = q(1−q)(R−1) / (2R((1−q) + qR))`
pub fn gain_derivative(r: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    if !(r >= 1.0 && r.is_finite()) {
        return Err(invalid(format!("R = {r} must be finite and >= 1")));
    }
    Ok(q * (1.0 - q) * (r - 1.0) / (2.0 * r * ((1.0 - q) + q * r)))
}

/// Residual variances of one prediction direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionStats {
    /// Conditioning variable observed.
    pub v0: f64,
    /// Conditioning variable missing.
    pub v1: f64,
}

impl DirectionStats {
    pub fn new(v0: f64, v1: f64) -> Result<Self> {
        if !(v0 > 0.0 && v1 > 0.0 && v0.is_finite() && v1.is_finite()) {
            return Err(invalid(format!("variances must be positive (v0 = {v0}, v1 = {v1})")));
        }
        Ok(Self { v0, v1 })
    }

    pub fn ratio(&self) -> f64 {
        self.v1 / self.v0
    }

    /// Mask-averaged variance `(1−q)v0 + q v1`.
    pub fn pooled(&self, q: f64) -> f64 {
        (1.0 - q) * self.v0 + q * self.v1
    }

    /// Expected Gaussian log-likelihood with one variance for both regimes.
    pub fn loglik_fixed(&self, q: f64) -> Result<f64> {
        check_q(q)?;
        let s = self.pooled(q);
        // E[e²] under the mixture equals the pooled variance
        Ok(-0.5 * (LN_2PI + s.ln()) - 0.5 * ((1.0 - q) * self.v0 + q * self.v1) / s)
    }

    /// Expected log-likelihood with a regime-specific variance.
    pub fn loglik_incremental(&self, q: f64) -> Result<f64> {
        check_q(q)?;
        let l0 = -0.5 * (LN_2PI + self.v0.ln()) - 0.5;
        let l1 = -0.5 * (LN_2PI + self.v1.ln()) - 0.5;
        Ok((1.0 - q) * l0 + q * l1)
    }

    pub fn loglik_gap(&self, q: f64) -> Result<f64> {
        Ok(self.loglik_incremental(q)? - self.loglik_fixed(q)?)
    }
}

/// Mechanism of `Y = f(X) + N`, `X ~ N(0, 1)`, `N ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mechanism1d {
    Constant { c: f64 },
    Linear { a: f64 },
    Tanh { a: f64, b: f64 },
    Cubic { a: f64 },
}

impl Mechanism1d {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Mechanism1d::Constant { c } => c,
            Mechanism1d::Linear { a } => a * x,
            Mechanism1d::Tanh { a, b } => a * (b * x).tanh(),
            Mechanism1d::Cubic { a } => a * x * x * x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnmPair {
    pub f: Mechanism1d,
    pub sigma: f64,
}

impl AnmPair {
    pub fn new(f: Mechanism1d, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("noise scale must be finite and non-negative"));
        }
        Ok(Self { f, sigma })
    }

    /// A random tanh or cubic mechanism with random amplitude and noise.
    pub fn random_nonlinear(rng: &mut TabRng) -> Self {
        let sigma = rng.random_range(0.1..0.6);
        let f = if rng.random::<bool>() {
            Mechanism1d::Tanh {
                a: rng.random_range(0.5..2.0),
                b: rng.random_range(1.0..4.0),
            }
        } else {
            Mechanism1d::Cubic {
                a: rng.random_range(0.2..1.0),
            }
        };
        Self { f, sigma }
    }

    pub fn sample(&self, n: usize, rng: &mut TabRng) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = StandardNormal.sample(rng);
            let ni: f64 = StandardNormal.sample(rng);
            x.push(xi);
            y.push(self.f.eval(xi) + self.sigma * ni);
        }
        (x, y)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Monte-Carlo `Var(f(X)) / σ²` using the known mechanism.
pub fn snr_forward(pair: &AnmPair, n_mc: usize, rng: &mut TabRng) -> Result<f64> {
    if n_mc < 1000 {
        return Err(invalid(format!("n_mc = {n_mc} below 1000")));
    }
    if pair.sigma == 0.0 {
        return Err(invalid("forward ratio undefined for zero noise"));
    }
    let fx: Vec<f64> = (0..n_mc)
        .map(|_| pair.f.eval(StandardNormal.sample(rng)))
        .collect();
    Ok(var(&fx) / (pair.sigma * pair.sigma))
}

/// `1 + ratio`
pub fn ratio_to_r(ratio: f64) -> f64 {
    1.0 + ratio
}

/// Conditional-moment estimate of `Var(E[X|Y]) / E[Var(X|Y)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BackwardEstimate {
    /// `Var(E[X|Y])`
    pub explained: f64,
    /// `E[Var(X|Y)]`
    pub residual: f64,
    pub ratio: f64,
}

fn finish_backward(var_x: f64, explained: f64, residual: f64) -> Result<BackwardEstimate> {
    if residual < DEGENERATE_FRACTION * var_x {
        return Err(Error::Degenerate(format!(
            "E[Var(X|Y)] = {residual:.3e} is below {DEGENERATE_FRACTION}·Var(X)"
        )));
    }
    let explained = explained.max(0.0);
    Ok(BackwardEstimate {
        explained,
        residual,
        ratio: explained / residual,
    })
}

fn check_samples(x: &[f64], y: &[f64], k: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid("x and y lengths differ"));
    }
    if x.len() < 5000 {
        return Err(invalid(format!("{} samples; at least 5000 required", x.len())));
    }
    if k < 10 || k >= x.len() {
        return Err(invalid(format!("k = {k} must be in [10, n)")));
    }
    if var(y) <= 0.0 {
        return Err(Error::Degenerate("Y has zero variance".into()));
    }
    Ok(())
}

/// Leave-one-out `k`-nearest-neighbor estimate in `Y`.
///
/// The mean squared leave-one-out residual overstates `E[Var(X|Y)]` by the
/// factor `1 + 1/k`, and the variance of the neighbor means overstates
/// `Var(E[X|Y])` by about `E[Var(X|Y)]/k`; both are corrected.
pub fn snr_backward(x: &[f64], y: &[f64], k: usize) -> Result<BackwardEstimate> {
    check_samples(x, y, k)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut fitted = Vec::with_capacity(n);
    let mut sse = 0.0;
    for i in 0..n {
        let (mut lo, mut hi) = (i, i);
        let mut sum = 0.0;
        for _ in 0..k {
            let left = if lo > 0 { Some(ys[i] - ys[lo - 1]) } else { None };
            let right = if hi + 1 < n { Some(ys[hi + 1] - ys[i]) } else { None };
            let take_left = match (left, right) {
                (Some(l), Some(r)) => l <= r,
                (Some(_), None) => true,
                _ => false,
            };
            if take_left {
                lo -= 1;
                sum += xs[lo];
            } else {
                hi += 1;
                sum += xs[hi];
            }
        }
        let m = sum / k as f64;
        fitted.push(m);
        sse += (xs[i] - m) * (xs[i] - m);
    }
    let residual = sse / n as f64 / (1.0 + 1.0 / k as f64);
    let explained = var(&fitted) - residual / k as f64;
    finish_backward(var(x), explained, residual)
}

/// Equal-count bins in `Y` of about `per_bin` samples: between-bin and
/// (unbiased) within-bin variances.
pub fn snr_backward_binned(x: &[f64], y: &[f64], per_bin: usize) -> Result<BackwardEstimate> {
    check_samples(x, y, per_bin)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let bins = n / per_bin;
    let mx = mean(x);
    let (mut between, mut within) = (0.0, 0.0);
    for b in 0..bins {
        let lo = b * n / bins;
        let hi = (b + 1) * n / bins;
        let vals: Vec<f64> = idx[lo..hi].iter().map(|&i| x[i]).collect();
        let c = vals.len() as f64;
        let m = mean(&vals);
        let s2 = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (c - 1.0);
        between += c * (m - mx) * (m - mx);
        within += c * s2;
    }
    let residual = within / n as f64;
    // bin means carry sampling variance residual/c
    let explained = between / n as f64 - residual * bins as f64 / n as f64;
    finish_backward(var(x), explained, residual)
}

/// Outcome of comparing the two prediction directions of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremReport {
    #[serde(rename = "Rf")]
    pub rf: f64,
    #[serde(rename = "Rb")]
    pub rb: f64,
    #[serde(rename = "G_fwd")]
    pub g_fwd: f64,
    #[serde(rename = "G_bwd")]
    pub g_bwd: f64,
    /// `G(Rf, q) − G(Rb, q)`
    pub delta: f64,
    /// Forward ratio exceeds backward ratio.
    pub amplified: bool,
    /// `(delta > 0) == (Rf > Rb)`.
    pub sign_agreement: bool,
    /// Same gap from closed-form log-likelihoods of the estimated variances.
    pub direct_delta: f64,
    /// Gap from simulated masks and empirical residual log-likelihoods.
    pub mc_delta: f64,
}

/// Empirical log-likelihood gain of regime-specific over pooled variance:
/// each residual pair `(e_obs, e_mis)` is scored under a random mask.
fn masked_gap(e_obs: &[f64], e_mis: &[f64], q: f64, rng: &mut TabRng) -> f64 {
    let n = e_obs.len();
    let masks: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < q).collect();
    let pick = |m: bool, i: usize| if m { e_mis[i] } else { e_obs[i] };
    let (mut s0, mut c0, mut s1, mut c1) = (0.0, 0usize, 0.0, 0usize);
    for (i, &m) in masks.iter().enumerate() {
        let e = pick(m, i);
        if m {
            s1 += e * e;
            c1 += 1;
        } else {
            s0 += e * e;
            c0 += 1;
        }
    }
    let v0 = s0 / c0.max(1) as f64;
    let v1 = s1 / c1.max(1) as f64;
    let pooled = (s0 + s1) / n as f64;
    let ll = |e: f64, v: f64| -0.5 * (LN_2PI + v.ln() + e * e / v);
    let mut gap = 0.0;
    for (i, &m) in masks.iter().enumerate() {
        let e = pick(m, i);
        gap += ll(e, if m { v1 } else { v0 }) - ll(e, pooled);
    }
    gap / n as f64
}

/// Forward/backward ratios, gains and the three routes to their difference.
pub fn theorem_check(pair: &AnmPair, q: f64, n_mc: usize, k: usize, rng: &mut TabRng) -> Result<TheoremReport> {
    check_q(q)?;
    let ratio_f = snr_forward(pair, n_mc, rng)?;
    let (x, y) = pair.sample(n_mc, rng);
    let back = snr_backward(&x, &y, k)?;
    let (rf, rb) = (ratio_to_r(ratio_f), ratio_to_r(back.ratio));
    let (g_fwd, g_bwd) = (gain(rf, q)?, gain(rb, q)?);
    let delta = g_fwd - g_bwd;

    let s2 = pair.sigma * pair.sigma;
    let fwd = DirectionStats::new(s2, s2 * rf)?;
    let bwd = DirectionStats::new(back.residual, back.residual * rb)?;
    let direct_delta = fwd.loglik_gap(q)? - bwd.loglik_gap(q)?;

    // residuals with the conditioning variable observed / missing
    let (my, mx) = (mean(&y), mean(&x));
    let fy_obs: Vec<f64> = x.iter().zip(&y).map(|(&xi, &yi)| yi - pair.f.eval(xi)).collect();
    let fy_mis: Vec<f64> = y.iter().map(|&yi| yi - my).collect();
    let bx_obs = loo_knn_residuals(&x, &y, k);
    let bx_mis: Vec<f64> = x.iter().map(|&xi| xi - mx).collect();
    let mc_delta = masked_gap(&fy_obs, &fy_mis, q, rng) - masked_gap(&bx_obs, &bx_mis, q, rng);

    Ok(TheoremReport {
        rf,
        rb,
        g_fwd,
        g_bwd,
        delta,
        amplified: rf > rb,
        sign_agreement: (delta > 0.0) == (rf > rb),
        direct_delta,
        mc_delta,
    })
}

/// `X − Ê[X|Y]` in the original sample order, leave-one-out kNN in `Y`.
fn loo_knn_residuals(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let (mut lo, mut hi) = (i, i);
        let mut sum = 0.0;
        for _ in 0..k {
            let left = (lo > 0).then(|| ys[i] - ys[lo - 1]);
            let right = (hi + 1 < n).then(|| ys[hi + 1] - ys[i]);
            if matches!((left, right), (Some(l), Some(r)) if l <= r) || right.is_none() {
                lo -= 1;
                sum += x[idx[lo]];
            } else {
                hi += 1;
                sum += x[idx[hi]];
            }
        }
        let orig = idx[i];
        out[orig] = x[orig] - sum / k as f64;
    }
    out
}
