//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes. Values are
//! computed eagerly; [`Graph::backward`] replays the tape in reverse once.

use rand::Rng;

use crate::error::{invalid, Result, TensorError};
use crate::kernels::{self, AttnDims};
use crate::scalar::{c, Scalar};
use crate::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this crate.
///
/// `forward` sees the input values; `backward` maps the output gradient to
/// one gradient buffer per input (or `None` for inputs that get nothing).
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&[T]]) -> Result<(Vec<usize>, Vec<T>)>;
    fn backward(&self, inputs: &[&[T]], output: &[T], grad_out: &[T]) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulConst { x: Var, factor: Vec<T> },
    Scale { x: Var, factor: T },
    AddScalar { x: Var },
    Gelu { x: Var },
    Softplus { x: Var },
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Vec<T>, rstd: Vec<T> },
    Attention { q: Var, k: Var, v: Var, bias: Option<Var>, dims: AttnDims, probs: Vec<T> },
    SwapAxes01 { x: Var, a: usize, b: usize, inner: usize },
    Reshape { x: Var },
    MeanAxis0 { x: Var, rows: usize },
    Transpose { x: Var, m: usize, n: usize },
    PairSum { u: Var, v: Var, d: usize, h: usize },
    BroadcastRows { x: Var, rows: usize },
    Sum { x: Var },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op<T>,
}

/// Gradients returned by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros of `len` when no path reached it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<T> {
        self.get(var).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); len])
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(op: &'static str, v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>, rg: bool) -> Result<Var> {
        check_finite(op_name, &value)?;
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            value,
            shape,
            requires_grad: rg,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph values are finite")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Inserts a leaf; it tracks gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t.data().to_vec(),
            shape: t.shape().to_vec(),
            requires_grad: t.requires_grad(),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a trainable leaf regardless of the tensor's own flag.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "constant",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        self.push("constant", shape.to_vec(), data, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: self.shape(a).to_vec(),
                got: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `a[..., k] · b[k, n]`: leading dimensions of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sb.len() != 2 || *sa.last().unwrap() != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", expected: sa, got: sb });
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k.max(1);
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", shape, out, Op::MatMul { a, b, m, k, n }, rg)
    }

    /// Adds a vector along the trailing dimension.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(TensorError::ShapeMismatch { op: "add_bias", expected: sx, got: sb });
        }
        let n = sb[0];
        let b = self.value(bias);
        let out: Vec<T> = self.value(x).iter().enumerate().map(|(i, &v)| v + b[i % n]).collect();
        let rg = self.rg(x) || self.rg(bias);
        self.push("add_bias", sx, out, Op::AddBias { x, bias }, rg)
    }

    /// Linear layer `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("add", self.shape(a).to_vec(), out, Op::Add { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul { a, b }, rg)
    }

    /// Elementwise product with a non-differentiable factor.
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Result<Var> {
        if factor.len() != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                expected: self.shape(x).to_vec(),
                got: vec![factor.len()],
            });
        }
        let out = self.value(x).iter().zip(&factor).map(|(&v, &f)| v * f).collect();
        let rg = self.rg(x);
        self.push("mul_const", self.shape(x).to_vec(), out, Op::MulConst { x, factor }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let rg = self.rg(x);
        self.push("scale", self.shape(x).to_vec(), out, Op::Scale { x, factor }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, value: T) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v + value).collect();
        let rg = self.rg(x);
        self.push("add_scalar", self.shape(x).to_vec(), out, Op::AddScalar { x }, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let rg = self.rg(x);
        self.push("gelu", self.shape(x).to_vec(), out, Op::Gelu { x }, rg)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| kernels::softplus(v)).collect();
        let rg = self.rg(x);
        self.push("softplus", self.shape(x).to_vec(), out, Op::Softplus { x }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: T) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let h = *sx.last().ok_or_else(|| invalid("layer_norm on a scalar"))?;
        if self.shape(gain) != [h] || self.shape(shift) != [h] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                expected: vec![h],
                got: self.shape(gain).to_vec(),
            });
        }
        if eps <= T::zero() {
            return Err(invalid("layer_norm requires eps > 0"));
        }
        let (out, xhat, rstd) =
            kernels::layer_norm(self.value(x), self.value(gain), self.value(shift), h, eps);
        let rg = self.rg(x) || self.rg(gain) || self.rg(shift);
        self.push("layer_norm", sx, out, Op::LayerNorm { x, gain, shift, xhat, rstd }, rg)
    }

    /// Grouped multi-head attention. `q`, `k`, `v` hold `groups` sequences of
    /// `tokens` tokens each (any shape with that many elements times `h`);
    /// `bias`, if given, is `tokens × tokens` and shared by all groups.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        groups: usize,
        tokens: usize,
        heads: usize,
    ) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let sq = self.shape(q).to_vec();
        let h = *sq.last().ok_or_else(|| invalid("attention on a scalar"))?;
        if heads == 0 || h % heads != 0 {
            return Err(invalid(format!("attention: width {h} not divisible by {heads} heads")));
        }
        if groups * tokens * h != numel(&sq) {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                expected: vec![groups, tokens, h],
                got: sq,
            });
        }
        if let Some(b) = bias {
            if numel(self.shape(b)) != tokens * tokens {
                return Err(TensorError::ShapeMismatch {
                    op: "attention bias",
                    expected: vec![tokens, tokens],
                    got: self.shape(b).to_vec(),
                });
            }
        }
        let dims = AttnDims { groups, tokens, h, heads };
        let (out, probs) = kernels::attention(
            self.value(q),
            self.value(k),
            self.value(v),
            bias.map(|b| self.value(b)),
            dims,
        );
        let rg = self.rg(q) || self.rg(k) || self.rg(v) || bias.is_some_and(|b| self.rg(b));
        self.push("attention", sq, out, Op::Attention { q, k, v, bias, dims, probs }, rg)
    }

    /// Post-softmax weights of an attention node, `[groups, heads, tokens, tokens]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `[a, b, inner] → [b, a, inner]`
    pub fn swap_axes01(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let len = self.value(x).len();
        if a == 0 || b == 0 || len % (a * b) != 0 {
            return Err(invalid(format!("swap_axes01: {a}×{b} does not divide {len}")));
        }
        let inner = len / (a * b);
        let src = self.value(x);
        let mut out = vec![T::zero(); len];
        for i in 0..a {
            for j in 0..b {
                let s = (i * b + j) * inner;
                let d = (j * a + i) * inner;
                out[d..d + inner].copy_from_slice(&src[s..s + inner]);
            }
        }
        let rg = self.rg(x);
        self.push("swap_axes01", vec![b, a, inner], out, Op::SwapAxes01 { x, a, b, inner }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                expected: shape.to_vec(),
                got: self.shape(x).to_vec(),
            });
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        self.push("reshape", shape.to_vec(), out, Op::Reshape { x }, rg)
    }

    /// Mean over the leading axis.
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.is_empty() || sx[0] == 0 {
            return Err(invalid("mean_axis0 needs a non-empty leading axis"));
        }
        let rows = sx[0];
        let rest = numel(&sx[1..]);
        let src = self.value(x);
        let mut out = vec![T::zero(); rest];
        for r in 0..rows {
            kernels::axpy(T::one(), &src[r * rest..(r + 1) * rest], &mut out);
        }
        let inv = T::one() / c::<T>(rows as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        let rg = self.rg(x);
        self.push("mean_axis0", sx[1..].to_vec(), out, Op::MeanAxis0 { x, rows }, rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(invalid(format!("transpose needs a matrix, got {sx:?}")));
        }
        let (m, n) = (sx[0], sx[1]);
        let src = self.value(x);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        self.push("transpose", vec![n, m], out, Op::Transpose { x, m, n }, rg)
    }

    /// `out[i, j, :] = u[i, :] + v[j, :]` for `u, v: [d, h]`.
    pub fn pair_sum(&mut self, u: Var, v: Var) -> Result<Var> {
        self.same_shape("pair_sum", u, v)?;
        let su = self.shape(u).to_vec();
        if su.len() != 2 {
            return Err(invalid("pair_sum expects [d, h] inputs"));
        }
        let (d, h) = (su[0], su[1]);
        let (uv, vv) = (self.value(u), self.value(v));
        let mut out = vec![T::zero(); d * d * h];
        for i in 0..d {
            for j in 0..d {
                let o = (i * d + j) * h;
                for t in 0..h {
                    out[o + t] = uv[i * h + t] + vv[j * h + t];
                }
            }
        }
        let rg = self.rg(u) || self.rg(v);
        self.push("pair_sum", vec![d, d, h], out, Op::PairSum { u, v, d, h }, rg)
    }

    /// Repeats `x` as `rows` leading rows.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows * src.len());
        for _ in 0..rows {
            out.extend_from_slice(src);
        }
        let mut shape = vec![rows];
        shape.extend(sx);
        let rg = self.rg(x);
        self.push("broadcast_rows", shape, out, Op::BroadcastRows { x, rows }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push("sum", vec![], vec![s], Op::Sum { x }, rg)
    }

    /// Inverted dropout with keep-probability `1 - p`; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = c::<T>(1.0 / (1.0 - p));
        let factor = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.mul_const(x, factor)
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp<T>>) -> Result<Var> {
        let (shape, out) = {
            let vals: Vec<&[T]> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&vals)?
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        let name = op.name();
        self.push(name, shape, out, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// Reverse-mode accumulation from a scalar `loss`. May run once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(TensorError::BackwardConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        if !self.rg(loss) {
            return Err(TensorError::Detached);
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let want = |v: Var| nodes[v.0].requires_grad;
        // Accumulate `f(buf)` into the gradient slot of `v`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                acc(a, &mut |da| kernels::matmul_grad_a(g, &nodes[b.0].value, da, m, k, n));
                acc(b, &mut |db| kernels::matmul_grad_b(&nodes[a.0].value, g, db, m, k, n));
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |dx| kernels::axpy(T::one(), g, dx));
                let n = nodes[bias.0].value.len();
                acc(*bias, &mut |db| {
                    for row in g.chunks_exact(n) {
                        kernels::axpy(T::one(), row, db);
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |d| kernels::axpy(T::one(), g, d));
                acc(*b, &mut |d| kernels::axpy(T::one(), g, d));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * av[i];
                    }
                });
            }
            Op::MulConst { x, factor } => acc(*x, &mut |d| {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i] * factor[i];
                }
            }),
            Op::Scale { x, factor } => acc(*x, &mut |d| kernels::axpy(*factor, g, d)),
            Op::AddScalar { x } => acc(*x, &mut |d| kernels::axpy(T::one(), g, d)),
            Op::Gelu { x } => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * kernels::gelu_grad(xv[i]);
                    }
                });
            }
            Op::Softplus { x } => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * kernels::sigmoid(xv[i]);
                    }
                });
            }
            Op::LayerNorm { x, gain, shift, xhat, rstd } => {
                let h = nodes[gain.0].value.len();
                let gv = &nodes[gain.0].value;
                let mut dx = want(*x).then(|| vec![T::zero(); g.len()]);
                let mut dg = want(*gain).then(|| vec![T::zero(); h]);
                let mut ds = want(*shift).then(|| vec![T::zero(); h]);
                kernels::layer_norm_backward(
                    g,
                    xhat,
                    rstd,
                    gv,
                    h,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    ds.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    acc(*x, &mut |d| kernels::axpy(T::one(), &dx, d));
                }
                if let Some(dg) = dg {
                    acc(*gain, &mut |d| kernels::axpy(T::one(), &dg, d));
                }
                if let Some(ds) = ds {
                    acc(*shift, &mut |d| kernels::axpy(T::one(), &ds, d));
                }
            }
            Op::Attention { q, k, v, bias, dims, probs } => {
                let want_bias = bias.is_some_and(want);
                let ag = kernels::attention_backward(
                    g,
                    &nodes[q.0].value,
                    &nodes[k.0].value,
                    &nodes[v.0].value,
                    probs,
                    *dims,
                    want_bias,
                );
                acc(*q, &mut |d| kernels::axpy(T::one(), &ag.dq, d));
                acc(*k, &mut |d| kernels::axpy(T::one(), &ag.dk, d));
                acc(*v, &mut |d| kernels::axpy(T::one(), &ag.dv, d));
                if let (Some(b), Some(db)) = (bias, ag.dbias.as_ref()) {
                    acc(*b, &mut |d| kernels::axpy(T::one(), db, d));
                }
            }
            Op::SwapAxes01 { x, a, b, inner } => {
                let (a, b, inner) = (*a, *b, *inner);
                acc(*x, &mut |d| {
                    for i in 0..a {
                        for j in 0..b {
                            let s = (i * b + j) * inner;
                            let o = (j * a + i) * inner;
                            kernels::axpy(T::one(), &g[o..o + inner], &mut d[s..s + inner]);
                        }
                    }
                });
            }
            Op::Reshape { x } => acc(*x, &mut |d| kernels::axpy(T::one(), g, d)),
            Op::MeanAxis0 { x, rows } => {
                let inv = T::one() / c::<T>(*rows as f64);
                acc(*x, &mut |d| {
                    for chunk in d.chunks_exact_mut(g.len()) {
                        kernels::axpy(inv, g, chunk);
                    }
                });
            }
            Op::Transpose { x, m, n } => {
                let (m, n) = (*m, *n);
                acc(*x, &mut |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] = d[i * n + j] + g[j * m + i];
                        }
                    }
                });
            }
            Op::PairSum { u, v, d, h } => {
                let (dd, h) = (*d, *h);
                acc(*u, &mut |du| {
                    for i in 0..dd {
                        for j in 0..dd {
                            let o = (i * dd + j) * h;
                            kernels::axpy(T::one(), &g[o..o + h], &mut du[i * h..(i + 1) * h]);
                        }
                    }
                });
                acc(*v, &mut |dv| {
                    for i in 0..dd {
                        for j in 0..dd {
                            let o = (i * dd + j) * h;
                            kernels::axpy(T::one(), &g[o..o + h], &mut dv[j * h..(j + 1) * h]);
                        }
                    }
                });
            }
            Op::BroadcastRows { x, rows } => {
                let _ = rows;
                acc(*x, &mut |d| {
                    for chunk in g.chunks_exact(d.len()) {
                        kernels::axpy(T::one(), chunk, d);
                    }
                });
            }
            Op::Sum { x } => {
                let gv = g[0];
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v = *v + gv));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&[T]> = inputs.iter().map(|v| nodes[v.0].value.as_slice()).collect();
                let ig = op.backward(&vals, &node.value, g);
                for (v, gi) in inputs.iter().zip(ig) {
                    if let Some(gi) = gi {
                        acc(*v, &mut |d| kernels::axpy(T::one(), &gi, d));
                    }
                }
            }
        }
    }
}
