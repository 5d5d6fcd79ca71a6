//! Slice-level numeric kernels shared by the eager ops and the tape.
//!
//! All reductions run in a fixed order, so results are bit-reproducible for
//! a given input regardless of how callers schedule work.

use crate::scalar::{c, Scalar};

/// Dot product with eight independent accumulators (lets the compiler
/// vectorize without reassociating a single running sum).
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let ar = &a[i * k..(i + 1) * k];
        for (kk, &av) in ar.iter().enumerate() {
            if av != T::zero() {
                axpy(av, &b[kk * n..(kk + 1) * n], row);
            }
        }
    }
    out
}

/// Accumulates `da += dout · bᵀ`.
pub fn matmul_grad_a<T: Scalar>(dout: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dr = &dout[i * n..(i + 1) * n];
        for kk in 0..k {
            da[i * k + kk] = da[i * k + kk] + dot(dr, &b[kk * n..(kk + 1) * n]);
        }
    }
}

/// Accumulates `db += aᵀ · dout`.
pub fn matmul_grad_b<T: Scalar>(a: &[T], dout: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dr = &dout[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != T::zero() {
                axpy(av, dr, &mut db[kk * n..(kk + 1) * n]);
            }
        }
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
#[inline]
pub fn phi_cdf<T: Scalar>(x: T) -> T {
    c::<T>(0.5) * (T::one() + (x * c(INV_SQRT_2)).erf())
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    x * phi_cdf(x)
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let pdf = c::<T>(INV_SQRT_2PI) * (-(x * x) * c(0.5)).exp();
    phi_cdf(x) + x * pdf
}

/// Numerically stable `ln(1 + eˣ)`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > c(20.0) {
        x
    } else if x < c(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place softmax of one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Per-token layer norm over the trailing dimension `h`. Returns the output
/// plus the normalized activations and reciprocal std needed for backward.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    shift: &[T],
    h: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let tokens = x.len() / h;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); tokens];
    let inv_h = T::one() / c::<T>(h as f64);
    for t in 0..tokens {
        let xs = &x[t * h..(t + 1) * h];
        let mean = xs.iter().copied().sum::<T>() * inv_h;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_h;
        let r = T::one() / (var + eps).sqrt();
        rstd[t] = r;
        for j in 0..h {
            let xh = (xs[j] - mean) * r;
            xhat[t * h + j] = xh;
            out[t * h + j] = xh * gain[j] + shift[j];
        }
    }
    (out, xhat, rstd)
}

/// Layer-norm backward. Accumulates into whichever gradient buffers are given.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    dout: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    h: usize,
    mut dx: Option<&mut [T]>,
    mut dgain: Option<&mut [T]>,
    mut dshift: Option<&mut [T]>,
) {
    let tokens = dout.len() / h;
    let inv_h = T::one() / c::<T>(h as f64);
    let mut dxhat = vec![T::zero(); h];
    for t in 0..tokens {
        let dy = &dout[t * h..(t + 1) * h];
        let xh = &xhat[t * h..(t + 1) * h];
        if let Some(dg) = dgain.as_deref_mut() {
            for j in 0..h {
                dg[j] = dg[j] + dy[j] * xh[j];
            }
        }
        if let Some(ds) = dshift.as_deref_mut() {
            for j in 0..h {
                ds[j] = ds[j] + dy[j];
            }
        }
        if let Some(dxs) = dx.as_deref_mut() {
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for j in 0..h {
                dxhat[j] = dy[j] * gain[j];
                m1 = m1 + dxhat[j];
                m2 = m2 + dxhat[j] * xh[j];
            }
            m1 = m1 * inv_h;
            m2 = m2 * inv_h;
            let r = rstd[t];
            for j in 0..h {
                let i = t * h + j;
                dxs[i] = dxs[i] + r * (dxhat[j] - m1 - xh[j] * m2);
            }
        }
    }
}

/// Geometry of a grouped multi-head attention call: `groups` independent
/// sequences of `tokens` tokens of width `h`, split into `heads` heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnDims {
    pub groups: usize,
    pub tokens: usize,
    pub h: usize,
    pub heads: usize,
}

impl AttnDims {
    pub fn head_dim(&self) -> usize {
        self.h / self.heads
    }
    fn offset(&self, g: usize, t: usize) -> usize {
        (g * self.tokens + t) * self.h
    }
}

fn gather_head<T: Scalar>(x: &[T], dims: AttnDims, g: usize, hd: usize, rows: &mut [T], cols: &mut [T]) {
    let (tn, dh) = (dims.tokens, dims.head_dim());
    for t in 0..tn {
        let base = dims.offset(g, t) + hd * dh;
        for cc in 0..dh {
            let v = x[base + cc];
            rows[t * dh + cc] = v;
            cols[cc * tn + t] = v;
        }
    }
}

/// Multi-head scaled dot-product attention with an optional additive bias
/// (`tokens × tokens`) shared by every group and head.
///
/// Returns the mixed values and the post-softmax weights laid out as
/// `[groups, heads, tokens, tokens]`.
pub fn attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    bias: Option<&[T]>,
    dims: AttnDims,
) -> (Vec<T>, Vec<T>) {
    let AttnDims { groups, tokens: tn, heads, .. } = dims;
    let dh = dims.head_dim();
    let scale = T::one() / c::<T>(dh as f64).sqrt();
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); groups * heads * tn * tn];
    let mut qh = vec![T::zero(); tn * dh];
    let mut qt = vec![T::zero(); tn * dh];
    let mut kh = vec![T::zero(); tn * dh];
    let mut kt = vec![T::zero(); tn * dh];
    let mut vh = vec![T::zero(); tn * dh];
    let mut vt = vec![T::zero(); tn * dh];
    for g in 0..groups {
        for hd in 0..heads {
            gather_head(q, dims, g, hd, &mut qh, &mut qt);
            gather_head(k, dims, g, hd, &mut kh, &mut kt);
            gather_head(v, dims, g, hd, &mut vh, &mut vt);
            let pbase = (g * heads + hd) * tn * tn;
            for t1 in 0..tn {
                let row = &mut probs[pbase + t1 * tn..pbase + (t1 + 1) * tn];
                match bias {
                    Some(b) => row.copy_from_slice(&b[t1 * tn..(t1 + 1) * tn]),
                    None => row.fill(T::zero()),
                }
                for cc in 0..dh {
                    axpy(qh[t1 * dh + cc] * scale, &kt[cc * tn..(cc + 1) * tn], row);
                }
                softmax_row(row);
                let obase = dims.offset(g, t1) + hd * dh;
                for cc in 0..dh {
                    out[obase + cc] = dot(row, &vt[cc * tn..(cc + 1) * tn]);
                }
            }
        }
    }
    (out, probs)
}

/// Gradients produced by [`attention_backward`].
pub struct AttnGrads<T> {
    pub dq: Vec<T>,
    pub dk: Vec<T>,
    pub dv: Vec<T>,
    pub dbias: Option<Vec<T>>,
}

pub fn attention_backward<T: Scalar>(
    dout: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dims: AttnDims,
    want_bias: bool,
) -> AttnGrads<T> {
    let AttnDims { groups, tokens: tn, heads, .. } = dims;
    let dh = dims.head_dim();
    let scale = T::one() / c::<T>(dh as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dbias = want_bias.then(|| vec![T::zero(); tn * tn]);
    let mut scratch = vec![T::zero(); tn * dh];
    let mut qh = vec![T::zero(); tn * dh];
    let mut kt = vec![T::zero(); tn * dh];
    let mut vt = vec![T::zero(); tn * dh];
    let mut doh = vec![T::zero(); tn * dh];
    let mut dkt = vec![T::zero(); tn * dh];
    let mut dvt = vec![T::zero(); tn * dh];
    let mut ds = vec![T::zero(); tn];
    for g in 0..groups {
        for hd in 0..heads {
            gather_head(q, dims, g, hd, &mut qh, &mut scratch);
            gather_head(k, dims, g, hd, &mut scratch, &mut kt);
            gather_head(v, dims, g, hd, &mut scratch, &mut vt);
            gather_head(dout, dims, g, hd, &mut doh, &mut scratch);
            dkt.fill(T::zero());
            dvt.fill(T::zero());
            let pbase = (g * heads + hd) * tn * tn;
            for t1 in 0..tn {
                let p = &probs[pbase + t1 * tn..pbase + (t1 + 1) * tn];
                ds.fill(T::zero());
                for cc in 0..dh {
                    let go = doh[t1 * dh + cc];
                    axpy(go, &vt[cc * tn..(cc + 1) * tn], &mut ds);
                    axpy(go, p, &mut dvt[cc * tn..(cc + 1) * tn]);
                }
                let inner = dot(p, &ds);
                for (d, &pv) in ds.iter_mut().zip(p) {
                    *d = pv * (*d - inner);
                }
                if let Some(db) = dbias.as_mut() {
                    axpy(T::one(), &ds, &mut db[t1 * tn..(t1 + 1) * tn]);
                }
                let obase = dims.offset(g, t1) + hd * dh;
                for cc in 0..dh {
                    dq[obase + cc] = scale * dot(&ds, &kt[cc * tn..(cc + 1) * tn]);
                    axpy(scale * qh[t1 * dh + cc], &ds, &mut dkt[cc * tn..(cc + 1) * tn]);
                }
            }
            for t in 0..tn {
                let base = dims.offset(g, t) + hd * dh;
                for cc in 0..dh {
                    dk[base + cc] = dkt[cc * tn + t];
                    dv[base + cc] = dvt[cc * tn + t];
                }
            }
        }
    }
    AttnGrads { dq, dk, dv, dbias }
}
